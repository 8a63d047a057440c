"""DCCRN assembly: complex encoder -> recurrent core -> complex decoder.

Channel counts in ``ModelConfig.encoder_channels`` count real and imaginary
feature maps together, so ``32`` means 16 complex channels; the network
input is one complex channel (the noisy spectrogram) and the last decoder
emits one complex channel, the mask.

Time handling is semi-causal: every encoder conv pads ``kT - 1`` zero frames
in front (strictly causal), and each of the first ``lookahead_frames``
decoder layers reads one future frame, so output frame t depends on input
frames up to t + lookahead_frames.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .complex import ComplexTensor, cmul, from_polar, magnitude, phase
from .complex import concat as cconcat
from .layers import (LSTM, ComplexBatchNorm, ComplexConv2d, ComplexConvTranspose2d, ComplexDense,
                     ComplexLSTM, Dense, Module, PReLU)
from .stft import Stft, StftConfig, remove_dc, restore_dc
from .targets import ComplexMask

VARIANTS = ("R", "C", "E", "CL")
MAX_LOOKAHEAD_S = 0.040


@dataclass
class ModelConfig:
    variant: str = "E"
    encoder_channels: tuple[int, ...] = (32, 64, 128, 128, 256, 256)
    kernel: tuple[int, int] = (5, 2)
    stride: tuple[int, int] = (2, 1)
    lstm_layers: int = 2
    lstm_units: int = 256
    dense_units: int = 1024
    lookahead_frames: int = 6
    stft: StftConfig = field(default_factory=StftConfig)

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> ModelConfig:
        """Full-size configuration of one variant (CL: wider encoder, complex LSTM)."""
        base = dict(variant=variant)
        if variant == "CL":
            base.update(encoder_channels=(32, 64, 128, 256, 256, 256), lstm_units=128)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, variant: str = "E", **overrides) -> ModelConfig:
        """Two-layer toy model used for CPU training and gradient checks."""
        base = dict(variant=variant, encoder_channels=(16, 32), lstm_layers=1, lstm_units=64,
                    dense_units=2048, lookahead_frames=2)
        base.update(overrides)
        return cls(**base)

    @property
    def depth(self) -> int:
        return len(self.encoder_channels)

    @property
    def freq_bins(self) -> int:
        """Network input height: STFT bins without DC."""
        return self.stft.n_bins - 1

    def encoder_freqs(self) -> list[int]:
        sizes = [self.freq_bins]
        k, s = self.kernel[0], self.stride[0]
        pad = (k - 1) // 2
        for _ in range(self.depth):
            sizes.append((sizes[-1] + 2 * pad - k) // s + 1)
        return sizes

    @property
    def flat_width(self) -> int:
        """Encoder output flattened per frame, both planes together."""
        return self.encoder_channels[-1] * self.encoder_freqs()[-1]

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.depth < 1:
            raise ValueError("need at least one encoder layer")
        if any(c <= 0 or c % 2 for c in self.encoder_channels):
            raise ValueError(
                f"encoder_channels must be positive and even (re+im pairs), got {self.encoder_channels}")
        kf, kt = self.kernel
        sf, st = self.stride
        if kf % 2 == 0:
            raise ValueError(f"frequency kernel must be odd for symmetric padding, got {kf}")
        if kt < 2:
            raise ValueError(f"time kernel must span at least 2 frames, got {kt}")
        if st != 1:
            raise ValueError(f"time stride must be 1 for frame-synchronous streaming, got {st}")
        if kf - sf - (kf - 1) // 2 < 0:
            raise ValueError(f"kernel {self.kernel} too small for stride {self.stride}")
        sizes = self.encoder_freqs()
        for a, b in zip(sizes, sizes[1:]):
            if b * sf != a:
                raise ValueError(
                    f"frequency size {a} does not divide cleanly by stride {sf} "
                    f"(encoder sizes {sizes})")
        if not 0 <= self.lookahead_frames <= self.depth:
            raise ValueError(
                f"lookahead_frames={self.lookahead_frames} must lie in [0, depth={self.depth}]")
        limit = MAX_LOOKAHEAD_S * self.stft.sample_rate
        if self.lookahead_frames * self.stft.hop > limit:
            raise ValueError(
                f"look-ahead {self.lookahead_frames} x {self.stft.hop} samples exceeds "
                f"{MAX_LOOKAHEAD_S * 1e3:.0f} ms")
        if self.dense_units != self.flat_width:
            raise ValueError(
                f"dense_units={self.dense_units} must equal the flattened encoder output "
                f"{self.encoder_channels[-1]} x {sizes[-1]} = {self.flat_width}")
        if self.lstm_layers < 1 or self.lstm_units < 1:
            raise ValueError("lstm_layers and lstm_units must be positive")

    # -- key/value form (checkpoint headers, run configs) ---------------------
    def to_dict(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            if f.name == "stft":
                for k, v in asdict(self.stft).items():
                    out[f"stft.{k}"] = str(v)
                continue
            v = getattr(self, f.name)
            out[f.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> ModelConfig:
        kw: dict = {}
        stft_kw: dict = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in d.items():
            if key.startswith("stft."):
                name = key[5:]
                if name not in {f.name for f in fields(StftConfig)}:
                    raise KeyError(f"unknown model key {key!r}")
                stft_kw[name] = raw if name == "window" else int(raw)
            elif key in types:
                if key == "variant":
                    kw[key] = raw
                elif "tuple" in str(types[key]):
                    kw[key] = tuple(int(x) for x in str(raw).split(",") if x.strip())
                else:
                    kw[key] = int(raw)
            else:
                raise KeyError(f"unknown model key {key!r}")
        if stft_kw:
            kw["stft"] = StftConfig(**stft_kw)
        return cls(**kw)


class EncoderBlock(Module):
    def __init__(self, in_ch, out_ch, cfg: ModelConfig, rng, dtype, name):
        super().__init__()
        kf, kt = cfg.kernel
        pad_f = (kf - 1) // 2
        self.conv = ComplexConv2d(in_ch, out_ch, cfg.kernel, cfg.stride, ((pad_f, pad_f), (kt - 1, 0)),
                                  rng=rng, dtype=dtype, name=f"{name}.conv")
        self.bn = ComplexBatchNorm(out_ch, dtype=dtype, name=f"{name}.bn")
        self.act = PReLU(out_ch, dtype=dtype)

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        return self.act(self.bn(self.conv(x)))

    __call__ = forward


class DecoderBlock(Module):
    """Transposed complex conv (+ BN + PReLU unless it is the output layer).

    With ``lookahead`` the time crop keeps full-output frames 1..T, i.e.
    output frame t mixes input frames t and t+1; otherwise frames 0..T-1.
    """

    def __init__(self, in_ch, out_ch, cfg: ModelConfig, lookahead: bool, last: bool, rng, dtype, name):
        super().__init__()
        kf, kt = cfg.kernel
        sf = cfg.stride[0]
        pad_f = (kf - 1) // 2
        crop_t = (1, kt - 2) if lookahead else (0, kt - 1)
        self.lookahead = lookahead
        self.last = last
        self.deconv = ComplexConvTranspose2d(in_ch, out_ch, cfg.kernel, cfg.stride,
                                             ((pad_f, kf - sf - pad_f), crop_t),
                                             rng=rng, dtype=dtype, name=f"{name}.deconv")
        if not last:
            self.bn = ComplexBatchNorm(out_ch, dtype=dtype, name=f"{name}.bn")
            self.act = PReLU(out_ch, dtype=dtype)

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        y = self.deconv(x)
        if self.last:
            return y
        return self.act(self.bn(y))

    __call__ = forward


def apply_mask(y: ComplexTensor, m: ComplexTensor, variant: str, bound_magnitude: bool = True) -> ComplexTensor:
    """Estimated clean spectrum from noisy ``y`` and mask ``m``.

    R: real and imaginary parts masked separately.
    C: complex multiplication y * m.
    E / CL: polar form |y| * tanh(|m|) * exp(j(angle(y) + angle(m))); with
    ``bound_magnitude=False`` the tanh is dropped, which makes E equal C.
    """
    if isinstance(m, ComplexMask):
        m = m.planes
    if tuple(y.shape) != tuple(m.shape):
        raise ValueError(f"apply_mask: spectrum {y.shape} and mask {m.shape} differ in shape")
    if variant == "R":
        return ComplexTensor(y.re * m.re, y.im * m.im)
    if variant == "C":
        return cmul(y, m)
    if variant in ("E", "CL"):
        m_mag = magnitude(m)
        if bound_magnitude:
            m_mag = ag.tanh(m_mag) if isinstance(m_mag, Tensor) else np.tanh(m_mag)
        return from_polar(magnitude(y) * m_mag, phase(y) + phase(m))
    raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")


def _planes_bt(x: ComplexTensor, fn):
    return ComplexTensor(fn(x.re), fn(x.im))


class DCCRN(Module):
    """Deep complex convolution recurrent network for one ``ModelConfig``."""

    def __init__(self, config: ModelConfig | None = None, dtype=np.float32, seed: int = 0):
        super().__init__()
        config = config or ModelConfig()
        config.validate()
        self.config = config
        self.dtype = np.dtype(dtype)
        self.stft = Stft(config.stft, dtype)
        rng = np.random.default_rng(seed)
        chans = [1] + [c // 2 for c in config.encoder_channels]
        depth = config.depth
        self.encoder = [EncoderBlock(chans[i], chans[i + 1], config, rng, dtype, f"encoder.{i}")
                        for i in range(depth)]
        self.enc_out_ch = chans[-1]
        self.enc_out_f = config.encoder_freqs()[-1]
        per_plane = self.enc_out_ch * self.enc_out_f
        if config.variant == "CL":
            self.rnn = ComplexLSTM(per_plane, config.lstm_units, config.lstm_layers, rng=rng, dtype=dtype)
            self.dense = ComplexDense(config.lstm_units, per_plane, rng=rng, dtype=dtype)
        else:
            self.rnn = LSTM(2 * per_plane, config.lstm_units, config.lstm_layers, rng=rng, dtype=dtype)
            self.dense = Dense(config.lstm_units, config.dense_units, rng=rng, dtype=dtype)
        self.decoder = []
        for i in range(depth):
            level = depth - i
            self.decoder.append(DecoderBlock(
                2 * chans[level], chans[level - 1], config,
                lookahead=i < config.lookahead_frames, last=i == depth - 1,
                rng=rng, dtype=dtype, name=f"decoder.{i}"))

    # -- geometry ------------------------------------------------------------
    @property
    def lead_in(self) -> int:
        """Zeros prepended before analysis so every input sample is covered by
        a full set of overlapping frames."""
        return self.config.stft.win_len - self.config.stft.hop

    def padded_frames(self, length: int) -> int:
        cfg = self.config.stft
        total = self.lead_in + length + self.lead_in
        return max(1, -(-(total - cfg.win_len) // cfg.hop) + 1)

    def pad_wave(self, wave: np.ndarray) -> np.ndarray:
        cfg = self.config.stft
        length = wave.shape[-1]
        frames = self.padded_frames(length)
        total = (frames - 1) * cfg.hop + cfg.win_len
        widths = [(0, 0)] * (wave.ndim - 1) + [(self.lead_in, total - self.lead_in - length)]
        return np.pad(wave, widths)

    # -- network -------------------------------------------------------------
    def _recurrent(self, x: ComplexTensor) -> ComplexTensor:
        bsz, ch, fr, steps = x.shape

        def to_seq(p):  # [B, C, F, T] -> [B, T, C*F]
            return p.transpose(0, 3, 1, 2).reshape(bsz, steps, ch * fr)

        def from_seq(p):  # [B, T, C*F] -> [B, C, F, T]
            return p.reshape(bsz, steps, ch, fr).transpose(0, 2, 3, 1)

        xr, xi = _as_node(x.re), _as_node(x.im)
        if self.config.variant == "CL":
            h, _ = self.rnn(ComplexTensor(to_seq(xr), to_seq(xi)))
            out = self.dense(h)
            return ComplexTensor(from_seq(out.re), from_seq(out.im))
        seq = ag.concat([to_seq(xr), to_seq(xi)], axis=2)
        h, _ = self.rnn(seq)
        out = self.dense(h)
        half = ch * fr
        return ComplexTensor(from_seq(out[:, :, :half]), from_seq(out[:, :, half:]))

    def net(self, y: ComplexTensor) -> ComplexTensor:
        """Mask [B, F', T] for a DC-free noisy spectrum [B, F', T]."""
        x = _planes_bt(y, lambda p: _as_node(p).reshape((p.shape[0], 1) + tuple(p.shape[1:])))
        skips = []
        for blk in self.encoder:
            x = blk(x)
            skips.append(x)
        x = self._recurrent(x)
        for i, blk in enumerate(self.decoder):
            x = blk(cconcat([x, skips[-1 - i]], axis=1))
        return x.map(lambda p: p[:, 0])

    def forward(self, wave, oracle_mask: ComplexMask | None = None, sample_rate: int | None = None):
        """Enhance ``wave`` ([L] or [B, L]); returns (mask, enhanced wave).

        With ``oracle_mask`` the network is bypassed and the given mask is
        applied by complex multiplication. Output length equals input length.
        """
        if sample_rate is not None and sample_rate != self.config.stft.sample_rate:
            raise ValueError(
                f"sample rate {sample_rate} Hz does not match model rate {self.config.stft.sample_rate} Hz")
        wave = np.asarray(wave, dtype=self.dtype)
        single = wave.ndim == 1
        if single:
            wave = wave[None]
        length = wave.shape[-1]
        spec = self.stft.analyze(self.pad_wave(wave)).bins
        y = remove_dc(spec)
        if oracle_mask is not None:
            m = oracle_mask.planes
            if len(m.shape) == 2:
                m = m.map(lambda p: p[None])
            est = apply_mask(y, m, "C")
        else:
            m = self.net(y)
            est = apply_mask(y, m, self.config.variant)
        out = self.stft.synthesize(restore_dc(est))[..., self.lead_in:self.lead_in + length]
        if single:
            m = m[0]
            out = out[0]
        return ComplexMask(m), out

    __call__ = forward

    def enhance(self, wave) -> np.ndarray:
        """Inference-only offline enhancement returning a numpy waveform."""
        with ag.no_grad():
            _, out = self.forward(wave)
        return np.asarray(out.data if isinstance(out, Tensor) else out)

    def calibrate(self, wave) -> DCCRN:
        """Fill batch-norm running statistics from one no-grad pass over
        ``wave`` and switch to eval mode (for untrained or freshly built models)."""
        was = self.training
        self.train()
        with ag.no_grad():
            self.forward(wave)
        self.train(was)
        return self.eval()

    def parameter_count(self) -> int:
        return self.num_parameters()


def _as_node(p):
    return p if isinstance(p, Tensor) else Tensor(p)


def build(config: ModelConfig | None = None, dtype=np.float32, seed: int = 0) -> DCCRN:
    """Construct a model; raises ValueError on inconsistent configuration."""
    return DCCRN(config, dtype=dtype, seed=seed)


def parameter_count(config: ModelConfig) -> int:
    """Parameter count of ``config`` without allocating a seeded model twice."""
    return build(config).num_parameters()


def lookahead_ms(config: ModelConfig) -> float:
    return 1e3 * config.lookahead_frames * config.stft.hop / config.stft.sample_rate


__all__ = ["ModelConfig", "DCCRN", "build", "apply_mask", "parameter_count", "lookahead_ms", "VARIANTS"]
