"""Frame-by-frame inference with the same arithmetic as the offline model.

A ``StreamingEngine`` snapshots an eval-mode ``DCCRN`` into plain numpy
kernels. Every layer keeps exactly the context the offline graph would read:

* encoder convs hold the previous frame (their kernel spans two frames and
  the front padding makes them causal);
* each decoder layer holds its previous input; a look-ahead layer's output
  for frame t is only final once input t+1 arrives, so it lags one frame;
* skip frames wait in per-layer queues until the decoder path catches up;
* LSTM (h, c) is carried across calls.

Call k consumes hop samples and completes STFT frame k of the padded
timeline (the offline path prepends ``win_len - hop`` zeros). Once the
decoder has caught up it emits the hop samples that frame k - lookahead
finalises, so the first ``lookahead_frames`` calls return ``None``.
``flush`` feeds trailing zeros up to the offline frame count, gives the
look-ahead layers their zero future frame, and drains the synthesis tail.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .autograd import _sigmoid
from .complex import ComplexTensor
from .model import DCCRN, apply_mask

_TOKENS = itertools.count(1)
_STREAMS = itertools.count(1)


# Complex combination of the four real products (w-plane x input-plane),
# ordered (w_r x_r, w_r x_i, w_i x_r, w_i x_i) -> (re, im).
_COMBINE = np.array([[1.0, 0.0, 0.0, -1.0], [0.0, 1.0, 1.0, 0.0]])


def _prelu(y: np.ndarray, slope: np.ndarray, bounded: bool) -> np.ndarray:
    if bounded:  # 0 <= slope <= 1 makes max(y, slope*y) the PReLU exactly
        return np.maximum(y, slope * y)
    return np.where(y >= 0, y, slope * y)


def _bn_terms(blk, bias, dtype):
    """Eval BN as a per-channel 2x2 matrix [C, 2, 2] and offset [C, 2, 1],
    with the conv bias folded into the offset."""
    (a_rr, a_ri, a_ir, a_ii), (b_r, b_i) = blk.bn.eval_affine()
    a = np.stack([np.stack([a_rr, a_ri], 1), np.stack([a_ir, a_ii], 1)], 1).astype(np.float64)
    off = np.stack([b_r, b_i], 1).astype(np.float64) + np.einsum("cij,cj->ci", a, np.stack(bias, 1))
    slope = blk.act.slope.data.astype(dtype)
    return a, off[:, :, None].astype(dtype), slope[:, None, None], bool(np.all((slope >= 0) & (slope <= 1)))


def _stack_rows(wr: np.ndarray, wi: np.ndarray, dtype) -> np.ndarray:
    """Interleave real/imag weight rows per output channel: rows (o, plane, ...)."""
    return np.ascontiguousarray(np.stack([wr, wi], 1).reshape(-1, wr.shape[-1]), dtype=dtype)


# Activations travel as [C, 2, F] (channel, re/im plane, frequency) so the
# im2col matrices below are plain reshapes or a single gather.

class _EncoderKernel:
    """One causal complex conv + BN + PReLU step."""

    def __init__(self, blk, dtype):
        conv = blk.conv
        self.kf, self.kt = conv.kernel
        self.sf = conv.stride[0]
        (self.pad, self.pad_hi), _ = conv.padding
        self.c_in, self.c_out = conv.in_ch, conv.out_ch
        self.w = _stack_rows(conv.w_re.data.reshape(self.c_out, -1),
                             conv.w_im.data.reshape(self.c_out, -1), dtype)
        bias = (conv.b_re.data.astype(np.float64), conv.b_im.data.astype(np.float64))
        a, self.off, self.slope, self.bounded = _bn_terms(blk, bias, dtype)
        # BN matrix applied after the complex combination, as one [C, 2, 4] map
        self.mix = np.ascontiguousarray(a @ _COMBINE, dtype=dtype)

    def geometry(self, f_in: int) -> int:
        fp = f_in + self.pad + self.pad_hi
        f_out = (fp - self.kf) // self.sf + 1
        self.fin, self.fp, self.fout = f_in, fp, f_out
        c, kf, kt = self.c_in, self.kf, self.kt
        # buffer [C, kt, 2, Fp]; gathered rows (c, kf, kt), columns (plane, f)
        ci = np.arange(c)[:, None, None, None, None]
        ki = np.arange(kf)[None, :, None, None, None]
        ti = np.arange(kt)[None, None, :, None, None]
        pi = np.arange(2)[None, None, None, :, None]
        fi = np.arange(f_out)[None, None, None, None, :]
        flat = ((ci * kt + ti) * 2 + pi) * fp + fi * self.sf + ki
        self.idx = flat.reshape(c * kf * kt, 2 * f_out)
        return f_out

    def zero_state(self, dtype):
        return np.zeros((self.c_in, self.kt, 2, self.fp), dtype)

    def step(self, buf: np.ndarray, x: np.ndarray) -> np.ndarray:
        buf[:, :-1] = buf[:, 1:]
        buf[:, -1, :, self.pad:self.pad + self.fin] = x
        z = (self.w @ np.take(buf, self.idx)).reshape(self.c_out, 4, self.fout)
        y = self.mix @ z
        y += self.off
        return _prelu(y, self.slope, self.bounded)


class _DecoderKernel:
    """One transposed complex conv step (+ BN + PReLU unless last)."""

    def __init__(self, blk, dtype, path_ch: int):
        conv = blk.deconv
        self.kf, self.kt = conv.kernel
        self.sf = conv.stride[0]
        (self.crop, _), _ = conv.crop
        self.c_in, self.c_out = conv.in_ch, conv.out_ch
        self.path_ch = path_ch
        # rows (o, kf, plane), columns (c, kt) with kt = 0 the newest input frame
        shape = (self.c_out * self.kf, self.c_in * self.kt)
        wr = conv.w_re.data.transpose(1, 2, 0, 3).reshape(shape)
        wi = conv.w_im.data.transpose(1, 2, 0, 3).reshape(shape)
        self.w = _stack_rows(wr, wi, dtype)
        self.combine = _COMBINE.astype(dtype)
        bias = (conv.b_re.data.astype(np.float64), conv.b_im.data.astype(np.float64))
        self.lookahead = blk.lookahead
        self.last = blk.last
        if blk.last:
            self.off = np.stack(bias, 1)[:, :, None].astype(dtype)
        else:
            a, self.off, self.slope, self.bounded = _bn_terms(blk, bias, dtype)
            self.bn = a.astype(dtype)

    def geometry(self, f_in: int) -> int:
        self.fin = f_in
        self.fout = f_in * self.sf
        # output j = sf*g + r collects tap k from input f = g + d, where
        # sf*f + k = j + crop; group taps by output phase r
        self.taps = []
        for r in range(self.sf):
            group = []
            for k in range(self.kf):
                num = r + self.crop - k
                if num % self.sf == 0:
                    d = num // self.sf
                    lo, hi = max(0, -d), min(f_in, f_in - d)
                    if lo < hi:
                        group.append((k, d, lo, hi))
            self.taps.append(group)
        return self.fout

    def zero_state(self, dtype):
        return np.zeros((self.c_in, self.kt, 2, self.fin), dtype)

    def step(self, buf: np.ndarray, x, skip) -> np.ndarray:
        buf[:, 1:] = buf[:, :-1]
        if x is None:
            buf[:, 0] = 0
        else:
            buf[:self.path_ch, 0] = x
            buf[self.path_ch:, 0] = skip
        z = self.w @ buf.reshape(self.c_in * self.kt, 2 * self.fin)
        # [O*kf, 4, F] -> complex combination -> [O, kf, 2, F]
        zc = (self.combine @ z.reshape(-1, 4, self.fin)).reshape(self.c_out, self.kf, 2, self.fin)
        phases = []
        for group in self.taps:
            acc = np.zeros((self.c_out, 2, self.fin), buf.dtype)
            for k, d, lo, hi in group:
                acc[:, :, lo:hi] += zc[:, k, :, lo + d:hi + d]
            phases.append(acc)
        out = np.stack(phases, -1).reshape(self.c_out, 2, self.fout)
        if self.last:
            return out + self.off
        y = self.bn @ out
        y += self.off
        return _prelu(y, self.slope, self.bounded)


class _FusedLSTM:
    """Inference LSTM with input and recurrent weights stacked into one matmul."""

    def __init__(self, lstm, dtype):
        self.hidden = lstm.hidden
        self.w = [np.ascontiguousarray(np.concatenate([wi.data, wh.data], 0), dtype=dtype)
                  for wi, wh in zip(lstm.w_ih, lstm.w_hh)]
        self.bias = [b.data.astype(dtype) for b in lstm.bias]
        hid = self.hidden
        self.ifo = np.r_[0:2 * hid, 3 * hid:4 * hid]

    def step(self, x: np.ndarray, state: list) -> tuple[np.ndarray, list]:
        hid = self.hidden
        out = x
        new = []
        for w, b, (h, c) in zip(self.w, self.bias, state):
            z = np.concatenate([out, h], -1) @ w + b
            ifo = _sigmoid(z[..., self.ifo])
            g = np.tanh(z[..., 2 * hid:3 * hid])
            c = ifo[..., hid:2 * hid] * c + ifo[..., :hid] * g
            out = ifo[..., 2 * hid:] * np.tanh(c)
            new.append((out, c))
        return out, new


@dataclass
class StreamState:
    """Mutable per-stream context; create with ``StreamingEngine.init_state``."""

    stream_id: int
    engine_token: int
    window: np.ndarray
    enc_bufs: list
    dec_bufs: list
    dec_calls: list
    skips: list
    rnn_state: list
    pending_y: deque
    ola: np.ndarray
    frames_in: int = 0
    frames_out: int = 0
    samples_in: int = 0
    finished: bool = False
    extra: dict = field(default_factory=dict)


class StreamingEngine:
    """Compiled single-stream inference path of an eval-mode model."""

    def __init__(self, model: DCCRN):
        cfg = model.config
        self.model = model
        self.config = cfg
        self.dtype = model.dtype
        self.token = next(_TOKENS)
        st = cfg.stft
        self.hop, self.win = st.hop, st.win_len
        self.lead_in = model.lead_in
        self.lookahead = cfg.lookahead_frames
        stft = model.stft
        wprod = (stft.window * stft.window).astype(np.float64)
        self._wprod = wprod
        self._floor = 1e-3 * stft.ola_gain
        self.overlap = -(-self.win // self.hop)  # frames touching one hop block

        dt = self.dtype
        # one matmul each for analysis (re|im) and synthesis ([re; im], DC row dropped)
        self.kernel = np.ascontiguousarray(np.concatenate([stft.kernel_re, stft.kernel_im], 1))
        self.inverse = np.ascontiguousarray(np.concatenate([stft.inv_re[1:], stft.inv_im[1:]], 0))
        self.n_bins = cfg.stft.n_bins

        self.enc = [_EncoderKernel(b, dt) for b in model.encoder]
        f = cfg.freq_bins
        for k in self.enc:
            f = k.geometry(f)
        depth = len(self.enc)
        self.dec = []
        for i, blk in enumerate(model.decoder):
            skip_ch = self.enc[depth - 1 - i].c_out
            k = _DecoderKernel(blk, dt, blk.deconv.in_ch - skip_ch)
            k.geometry(self.enc[depth - 1 - i].fout)
            self.dec.append(k)
        self.variant = cfg.variant
        self.enc_c, self.enc_f = model.enc_out_ch, model.enc_out_f
        if self.variant == "CL":
            self.rnn = [(_FusedLSTM(r, dt), _FusedLSTM(i, dt))
                        for r, i in zip(model.rnn.lstm_r, model.rnn.lstm_i)]
            d = model.dense
            self.dense_w = np.ascontiguousarray(np.concatenate([d.w_re.data, d.w_im.data], 1), dtype=dt)
            self.dense_b = np.stack([d.b_re.data, d.b_im.data]).astype(dt)
        else:
            self.rnn = _FusedLSTM(model.rnn, dt)
            self.dense_w = np.ascontiguousarray(model.dense.weight.data, dtype=dt)
            self.dense_b = model.dense.bias.data.astype(dt)

    def _zero_rnn(self):
        dt = self.dtype
        if self.variant == "CL":
            def z(m):
                return [(np.zeros((2, m.hidden), dt), np.zeros((2, m.hidden), dt)) for _ in m.w]
            return [(z(r), z(i)) for r, i in self.rnn]
        return [(np.zeros(self.rnn.hidden, dt), np.zeros(self.rnn.hidden, dt)) for _ in self.rnn.w]

    # -- state ------------------------------------------------------------------
    def init_state(self) -> StreamState:
        dt = self.dtype
        return StreamState(
            stream_id=next(_STREAMS), engine_token=self.token,
            window=np.zeros(self.win, dt),
            enc_bufs=[k.zero_state(dt) for k in self.enc],
            dec_bufs=[k.zero_state(dt) for k in self.dec],
            dec_calls=[0] * len(self.dec),
            skips=[deque() for _ in self.dec],
            rnn_state=self._zero_rnn(),
            pending_y=deque(),
            ola=np.zeros(self.overlap * self.hop, dt),
        )

    def _check(self, state: StreamState) -> None:
        if not isinstance(state, StreamState):
            raise TypeError("expected a StreamState from init_state()")
        if state.engine_token != self.token:
            raise ValueError(
                f"stream {state.stream_id} belongs to another engine "
                f"(token {state.engine_token}, this engine {self.token})")
        if state.finished:
            raise RuntimeError(f"stream {state.stream_id} was already flushed")

    # -- per-frame pipeline --------------------------------------------------
    def _analyze(self, frame: np.ndarray):
        y = frame @ self.kernel
        return y[1:self.n_bins], y[self.n_bins + 1:]

    def _recurrent(self, state, x: np.ndarray) -> np.ndarray:
        c, f = self.enc_c, self.enc_f
        if self.variant == "CL":
            xr, xi = x[:, 0].reshape(-1), x[:, 1].reshape(-1)
            new = []
            for (lr, li), (st_r, st_i) in zip(self.rnn, state.rnn_state):
                both = np.stack([xr, xi])
                out_r, st_r = lr.step(both, st_r)
                out_i, st_i = li.step(both, st_i)
                xr, xi = out_r[0] - out_i[1], out_i[0] + out_r[1]
                new.append((st_r, st_i))
            state.rnn_state = new
            z = np.stack([xr, xi]) @ self.dense_w
            n = z.shape[1] // 2
            re = z[0, :n] - z[1, n:] + self.dense_b[0]
            im = z[0, n:] + z[1, :n] + self.dense_b[1]
            return np.stack([re.reshape(c, f), im.reshape(c, f)], 1)
        seq = np.concatenate([x[:, 0].reshape(-1), x[:, 1].reshape(-1)])
        h, state.rnn_state = self.rnn.step(seq, state.rnn_state)
        out = h @ self.dense_w + self.dense_b
        return out.reshape(2, c, f).transpose(1, 0, 2)

    def _decode(self, state, carry: list, final: bool) -> list:
        for i, k in enumerate(self.dec):
            outs = []
            for x in carry:
                y = self._dec_step(state, i, x, state.skips[i].popleft())
                if y is not None:
                    outs.append(y)
            if final and k.lookahead and state.dec_calls[i] > 0:
                outs.append(self._dec_step(state, i, None, None))
            carry = outs
        return carry

    def _dec_step(self, state, i, x, skip):
        k = self.dec[i]
        y = k.step(state.dec_bufs[i], x, skip)
        state.dec_calls[i] += 1
        if k.lookahead and state.dec_calls[i] == 1:
            return None
        return y

    def _norm_block(self, t: int, n_frames: int) -> np.ndarray:
        """Inverse window-sum for padded samples [t*hop, (t+1)*hop)."""
        hop = self.hop
        wp = np.zeros(self.overlap * hop)
        wp[:self.win] = self._wprod
        norm = np.zeros(hop)
        for q in range(max(0, t - (n_frames - 1)), min(t, self.overlap - 1) + 1):
            norm += wp[q * hop:(q + 1) * hop]
        norm = norm.astype(self.dtype)
        inv = np.where(norm > self._floor, 1.0 / np.maximum(norm, self._floor), 0.0)
        return inv.astype(self.dtype)

    def _synth(self, state, mask: np.ndarray, n_frames: int | None) -> np.ndarray:
        yr, yi = state.pending_y.popleft()
        m = ComplexTensor(mask[0, 0], mask[0, 1])
        est = apply_mask(ComplexTensor(yr, yi), m, self.variant)
        # restored DC row is zero, so bin 0 contributes nothing
        frame = np.concatenate([est.re, est.im]) @ self.inverse
        state.ola[:self.win] += frame
        return self._emit(state, n_frames)

    def _emit(self, state, n_frames: int | None) -> np.ndarray:
        hop = self.hop
        t = state.frames_out
        total = n_frames if n_frames is not None else t + self.overlap
        block = state.ola[:hop] * self._norm_block(t, total)
        state.ola[:-hop] = state.ola[hop:]
        state.ola[-hop:] = 0
        state.frames_out += 1
        return block

    def _push_frame(self, state, block: np.ndarray, n_frames=None) -> list:
        w = state.window
        w[:-self.hop] = w[self.hop:]
        w[-self.hop:] = block
        yr, yi = self._analyze(w)
        state.pending_y.append((yr, yi))
        x = np.stack([yr, yi])[None]
        for i, k in enumerate(self.enc):
            x = k.step(state.enc_bufs[i], x)
            state.skips[len(self.dec) - 1 - i].append(x)
        x = self._recurrent(state, x)
        masks = self._decode(state, [x], final=False)
        state.frames_in += 1
        return [self._synth(state, m, n_frames) for m in masks]

    # -- public API ------------------------------------------------------------
    def forward_streaming(self, state: StreamState, frame) -> np.ndarray | None:
        """Feed ``hop`` samples; returns ``hop`` enhanced samples or ``None``
        while the look-ahead is filling. Emitted samples are on the padded
        timeline, so the first ``lead_in`` of them precede the input."""
        self._check(state)
        frame = np.asarray(frame, dtype=self.dtype)
        if frame.shape != (self.hop,):
            raise ValueError(f"stream {state.stream_id}: expected a frame of {self.hop} samples, got shape {frame.shape}")
        if not np.all(np.isfinite(frame)):
            raise ValueError(f"stream {state.stream_id}: frame contains non-finite samples")
        out = self._push_frame(state, frame)
        state.samples_in += self.hop
        if not out:
            return None
        return out[0]

    def flush(self, state: StreamState, length: int | None = None) -> np.ndarray:
        """Drain the stream; returns every remaining padded-timeline sample.

        ``length`` is the number of genuine input samples (default: all fed
        samples), which fixes the frame count exactly as offline padding does.
        """
        self._check(state)
        state.finished = True
        if state.frames_in == 0:
            return np.zeros(self.lookahead * self.hop, self.dtype)
        length = state.samples_in if length is None else int(length)
        if not state.samples_in - self.hop < length <= state.samples_in:
            raise ValueError(
                f"stream {state.stream_id}: length {length} inconsistent with {state.samples_in} samples fed")
        n_frames = self.model.padded_frames(length)
        out = []
        zero = np.zeros(self.hop, self.dtype)
        while state.frames_in < n_frames:
            out.extend(self._push_frame(state, zero, n_frames=n_frames))
        # END: look-ahead layers see a zero future frame, as with offline padding
        masks = self._decode(state, [], final=True)
        out.extend(self._synth(state, m, n_frames) for m in masks)
        while state.frames_out < n_frames + self.overlap - 1:
            out.append(self._emit(state, n_frames))
        return np.concatenate(out) if out else np.zeros(0, self.dtype)


def enhance_stream(model_or_engine, wave) -> np.ndarray:
    """Run a whole waveform through the streaming path; same length and
    alignment as the offline ``DCCRN.enhance``."""
    engine = model_or_engine if isinstance(model_or_engine, StreamingEngine) else StreamingEngine(model_or_engine)
    wave = np.asarray(wave, dtype=engine.dtype)
    if wave.ndim != 1:
        raise ValueError(f"streaming expects a mono 1-D waveform, got shape {wave.shape}")
    length = len(wave)
    hop = engine.hop
    state = engine.init_state()
    if length == 0:
        return np.zeros(0, engine.dtype)
    padded = np.pad(wave, (0, -length % hop))
    pieces = []
    for k in range(len(padded) // hop):
        block = engine.forward_streaming(state, padded[k * hop:(k + 1) * hop])
        if block is not None:
            pieces.append(block)
    pieces.append(engine.flush(state, length))
    out = np.concatenate(pieces)
    return out[engine.lead_in:engine.lead_in + length]


__all__ = ["StreamingEngine", "StreamState", "enhance_stream"]
