"""Fused differentiable kernels: 2-D convolution, transposed convolution,
full-sequence LSTM and overlap-add.

Each is a single graph node with a hand-written backward, which keeps the
graph small enough for CPU training.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autograd import Tensor, _data, _make, _needs, _sigmoid


def conv_windows(xp: np.ndarray, kernel: tuple[int, int], stride: tuple[int, int]) -> np.ndarray:
    """Strided view [B, C, Ho, Wo, kH, kW] over an already padded input."""
    kh, kw = kernel
    sh, sw = stride
    win = sliding_window_view(xp, (kh, kw), axis=(-2, -1))
    return win[..., ::sh, ::sw, :, :]


def conv2d(x, w, stride=(1, 1), padding=((0, 0), (0, 0))) -> Tensor:
    """Cross-correlation of x [B, C, H, W] with w [O, C, kH, kW].

    ``padding`` is ((top, bottom), (left, right)) of zeros applied first.
    """
    xd, wd = _data(x), _data(w)
    if xd.shape[1] != wd.shape[1]:
        raise ValueError(
            f"conv2d channel mismatch: input {xd.shape} vs weight {wd.shape}")
    (pt, pb), (pl, pr) = padding
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pb or pl or pr) else xd
    kh, kw = wd.shape[2:]
    win = conv_windows(xp, (kh, kw), stride)
    ho, wo = win.shape[2], win.shape[3]
    out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3]))  # B, Ho, Wo, O
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def bw(g):
        gx = gw = None
        if _needs(w):
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, kH, kW
        if _needs(x):
            cols = np.tensordot(g, wd, axes=([1], [0]))  # B, Ho, Wo, C, kH, kW
            gxp = np.zeros(xp.shape, dtype=cols.dtype)
            sh, sw = stride
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += cols[..., i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pt:pt + xd.shape[2], pl:pl + xd.shape[3]]
        return gx, gw

    return _make(out, (x, w), bw)


def conv_transpose2d(x, w, stride=(1, 1), crop=((0, 0), (0, 0))) -> Tensor:
    """Transposed convolution of x [B, C, H, W] with w [C, O, kH, kW].

    The full output has size (H-1)*sH + kH by (W-1)*sW + kW; ``crop`` removes
    ((top, bottom), (left, right)) samples from it.
    """
    xd, wd = _data(x), _data(w)
    if xd.shape[1] != wd.shape[0]:
        raise ValueError(
            f"conv_transpose2d channel mismatch: input {xd.shape} vs weight {wd.shape}")
    b, _, h, wdt = xd.shape
    o, kh, kw = wd.shape[1:]
    sh, sw = stride
    hf, wf = (h - 1) * sh + kh, (wdt - 1) * sw + kw
    (ct, cb), (cl, cr) = crop
    cols = np.tensordot(xd, wd, axes=([1], [0]))  # B, H, W, O, kH, kW
    full = np.zeros((b, o, hf, wf), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + sh * h:sh, j:j + sw * wdt:sw] += cols[..., i, j].transpose(0, 3, 1, 2)
    hs = slice(ct, hf - cb)
    ws = slice(cl, wf - cr)
    out = np.ascontiguousarray(full[:, :, hs, ws])

    def bw(g):
        gfull = np.zeros(full.shape, dtype=g.dtype)
        gfull[:, :, hs, ws] = g
        gcols = conv_windows(gfull, (kh, kw), stride)[:, :, :h, :wdt]  # B, O, H, W, kH, kW
        gx = gw = None
        if _needs(x):
            gx = np.tensordot(gcols, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if _needs(w):
            gw = np.tensordot(xd, gcols, axes=([0, 2, 3], [0, 2, 3]))  # C, O, kH, kW
        return gx, gw

    return _make(out, (x, w), bw)


def lstm(x, w_ih, w_hh, bias, h0=None, c0=None):
    """Run one LSTM layer over x [B, T, I]; gates ordered (input, forget, cell, output).

    Returns (outputs [B, T, H] as a Tensor, (h_T, c_T) as arrays). The
    initial state is treated as a constant.
    """
    xd, wi, wh, bd = _data(x), _data(w_ih), _data(w_hh), _data(bias)
    bsz, steps, _ = xd.shape
    if steps == 0:
        raise ValueError("lstm got an empty sequence")
    hid = wh.shape[0]
    dt = np.result_type(xd, wi)
    h = np.zeros((bsz, hid), dt) if h0 is None else np.asarray(h0, dt)
    c = np.zeros((bsz, hid), dt) if c0 is None else np.asarray(c0, dt)
    xw = xd @ wi + bd  # B, T, 4H
    hs = np.empty((bsz, steps + 1, hid), dt)
    cs = np.empty((bsz, steps + 1, hid), dt)
    gates = np.empty((bsz, steps, 4 * hid), dt)
    hs[:, 0], cs[:, 0] = h, c
    for t in range(steps):
        z = xw[:, t] + h @ wh
        ifo = _sigmoid(z[:, np.r_[0:2 * hid, 3 * hid:4 * hid]])
        i_g, f_g, o_g = ifo[:, :hid], ifo[:, hid:2 * hid], ifo[:, 2 * hid:]
        g_g = np.tanh(z[:, 2 * hid:3 * hid])
        c = f_g * c + i_g * g_g
        h = o_g * np.tanh(c)
        gates[:, t, :hid], gates[:, t, hid:2 * hid] = i_g, f_g
        gates[:, t, 2 * hid:3 * hid], gates[:, t, 3 * hid:] = g_g, o_g
        hs[:, t + 1], cs[:, t + 1] = h, c
    out = hs[:, 1:].copy()

    def bw(g):
        dz = np.empty_like(gates)
        dh_next = np.zeros((bsz, hid), dt)
        dc_next = np.zeros((bsz, hid), dt)
        for t in range(steps - 1, -1, -1):
            i_g = gates[:, t, :hid]
            f_g = gates[:, t, hid:2 * hid]
            g_g = gates[:, t, 2 * hid:3 * hid]
            o_g = gates[:, t, 3 * hid:]
            tc = np.tanh(cs[:, t + 1])
            dh = g[:, t] + dh_next
            dc = dh * o_g * (1.0 - tc * tc) + dc_next
            dz[:, t, :hid] = dc * g_g * i_g * (1.0 - i_g)
            dz[:, t, hid:2 * hid] = dc * cs[:, t] * f_g * (1.0 - f_g)
            dz[:, t, 2 * hid:3 * hid] = dc * i_g * (1.0 - g_g * g_g)
            dz[:, t, 3 * hid:] = dh * tc * o_g * (1.0 - o_g)
            dc_next = dc * f_g
            dh_next = dz[:, t] @ wh.T
        flat_dz = dz.reshape(-1, 4 * hid)
        gx = (dz @ wi.T) if _needs(x) else None
        gwi = xd.reshape(-1, xd.shape[-1]).T @ flat_dz if _needs(w_ih) else None
        gwh = hs[:, :-1].reshape(-1, hid).T @ flat_dz if _needs(w_hh) else None
        gb = flat_dz.sum(axis=0) if _needs(bias) else None
        return gx, gwi, gwh, gb

    return _make(out, (x, w_ih, w_hh, bias), bw), (h, c)


def lstm_step(x: np.ndarray, w_ih, w_hh, bias, h: np.ndarray, c: np.ndarray):
    """One inference step on plain arrays; same arithmetic as ``lstm``."""
    hid = w_hh.shape[0]
    z = (x @ w_ih + bias) + h @ w_hh
    ifo = _sigmoid(z[..., np.r_[0:2 * hid, 3 * hid:4 * hid]])
    g_g = np.tanh(z[..., 2 * hid:3 * hid])
    c = ifo[..., hid:2 * hid] * c + ifo[..., :hid] * g_g
    h = ifo[..., 2 * hid:] * np.tanh(c)
    return h, c


def frame(x, win_len: int, hop: int) -> Tensor:
    """Frames [..., T, win_len] of x [..., L] starting at multiples of hop."""
    xd = _data(x)
    frames = sliding_window_view(xd, win_len, axis=-1)[..., ::hop, :]
    n = frames.shape[-2]

    def bw(g):
        return (_overlap_add(g, hop, xd.shape[-1], n),)

    return _make(np.ascontiguousarray(frames), (x,), bw)


def _overlap_add(frames: np.ndarray, hop: int, length: int, n: int | None = None) -> np.ndarray:
    n = frames.shape[-2] if n is None else n
    win = frames.shape[-1]
    slabs = -(-win // hop)
    lead = frames.shape[:-2]
    blocks = np.zeros(lead + (n + slabs, hop), dtype=frames.dtype)
    # add in hop-sized slabs: ceil(win/hop) vectorised adds instead of T small ones
    for q in range(slabs):
        seg = frames[..., :n, q * hop:(q + 1) * hop]
        blocks[..., q:q + n, :seg.shape[-1]] += seg
    flat = blocks.reshape(lead + ((n + slabs) * hop,))
    if flat.shape[-1] >= length:
        return flat[..., :length]
    return np.concatenate([flat, np.zeros(lead + (length - flat.shape[-1],), flat.dtype)], axis=-1)


def overlap_add(frames, hop: int) -> Tensor:
    """Inverse of ``frame``: sum frames [..., T, W] into a signal of (T-1)*hop + W."""
    fd = _data(frames)
    n, win = fd.shape[-2:]
    length = (n - 1) * hop + win
    out = np.ascontiguousarray(_overlap_add(fd, hop, length))

    def bw(g):
        return (np.ascontiguousarray(sliding_window_view(g, win, axis=-1)[..., ::hop, :]),)

    return _make(out, (frames,), bw)
