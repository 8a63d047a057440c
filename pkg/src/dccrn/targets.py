"""Training targets and objectives: complex ratio mask, spectral magnitude
mask, signal-approximation losses and SI-SNR."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .complex import ComplexTensor, cmul, magnitude, phase

EPS = 1e-8


@dataclass(frozen=True)
class ComplexMask:
    """Cartesian mask planes [..., F, T] with polar accessors."""

    planes: ComplexTensor

    @property
    def real(self):
        return self.planes.re

    @property
    def imag(self):
        return self.planes.im

    @property
    def mag(self):
        return magnitude(self.planes)

    @property
    def phase(self):
        return phase(self.planes)

    @property
    def shape(self):
        return self.planes.shape


def _spec(x) -> ComplexTensor:
    return getattr(x, "bins", x)


def crm(s, y, eps: float = EPS) -> ComplexMask:
    """Complex ratio mask S / Y with |Y|^2 floored at ``eps``."""
    s, y = _spec(s), _spec(y)
    if tuple(s.shape) != tuple(y.shape):
        raise ValueError(f"crm: clean {s.shape} and noisy {y.shape} differ in shape")
    yr, yi, sr, si = y.re, y.im, s.re, s.im
    den = np.maximum(yr * yr + yi * yi, eps)
    return ComplexMask(ComplexTensor((yr * sr + yi * si) / den, (yr * si - yi * sr) / den))


def smm(s_mag, y_mag, eps: float = EPS) -> np.ndarray:
    """Spectral magnitude mask |S| / |Y|, denominator floored at ``eps``."""
    s_mag, y_mag = np.asarray(s_mag), np.asarray(y_mag)
    return s_mag / np.maximum(y_mag, eps)


def _is_node(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def loss_csa(m, y, s) -> Tensor | float:
    """Mean over bins of |M*Y - S|^2 (both planes summed per bin)."""
    m = m.planes if isinstance(m, ComplexMask) else m
    y, s = _spec(y), _spec(s)
    if not (tuple(m.shape) == tuple(y.shape) == tuple(s.shape)):
        raise ValueError(f"loss_csa: shapes {m.shape}, {y.shape}, {s.shape} differ")
    est = cmul(m, y)
    dr, di = est.re - s.re, est.im - s.im
    sq = dr * dr + di * di
    return ag.mean(sq) if _is_node(sq) else float(np.mean(sq))


def loss_msa(m_mag, y_mag, s_mag) -> Tensor | float:
    """Mean of (|M| * |Y| - |S|)^2."""
    if np.shape(getattr(m_mag, "data", m_mag)) != np.shape(y_mag) or np.shape(y_mag) != np.shape(s_mag):
        raise ValueError("loss_msa: magnitude shapes differ")
    d = m_mag * y_mag - s_mag
    sq = d * d
    return ag.mean(sq) if _is_node(sq) else float(np.mean(sq))


def si_snr(estimate, reference, eps: float = EPS, zero_mean: bool = True):
    """Scale-invariant SNR in dB over the last axis.

    The estimate is projected onto the reference; the energy ratio of that
    projection to the residual is floored/capped at ``eps`` relative to the
    other term, so the result lies in [-80, 80] dB for the default ``eps``
    and is exactly invariant to rescaling the estimate until a guard engages.
    Works on arrays (returns float or array) and on Tensors (differentiable).
    """
    ref = np.asarray(getattr(reference, "data", reference))
    if isinstance(reference, Tensor):
        raise TypeError("reference must be a constant array")
    if estimate.shape != ref.shape:
        raise ValueError(f"si_snr: estimate {estimate.shape} and reference {ref.shape} differ in shape")
    if zero_mean:
        ref = ref - ref.mean(axis=-1, keepdims=True)
    ref_energy = np.sum(ref * ref, axis=-1, keepdims=True)
    if np.any(ref_energy <= 0):
        raise ValueError("si_snr: reference is all zero (after mean removal)")
    node = isinstance(estimate, Tensor)
    if node:
        est = estimate - ag.mean(estimate, -1, keepdims=True) if zero_mean else estimate
        dot = ag.sum_(est * ref, -1, keepdims=True)
        target = dot * (ref / ref_energy)
        noise = est - target
        t_en = ag.sum_(target * target, -1)
        n_en = ag.sum_(noise * noise, -1)
        num = ag.maximum(t_en, eps * n_en.data + 1e-30)
        den = ag.maximum(n_en, eps * t_en.data + 1e-30)
        return 10.0 * ag.log10(num / den)
    est = np.asarray(estimate, dtype=np.result_type(estimate, np.float32))
    if zero_mean:
        est = est - est.mean(axis=-1, keepdims=True)
    dot = np.sum(est * ref, axis=-1, keepdims=True)
    target = dot * (ref / ref_energy)
    noise = est - target
    t_en = np.sum(target * target, axis=-1)
    n_en = np.sum(noise * noise, axis=-1)
    val = 10.0 * np.log10(np.maximum(t_en, eps * n_en + 1e-30) / np.maximum(n_en, eps * t_en + 1e-30))
    return float(val) if np.ndim(val) == 0 else val


def loss_sisnr(estimate, reference, eps: float = EPS, zero_mean: bool = True):
    """Negative SI-SNR averaged over the batch, for minimisation."""
    val = si_snr(estimate, reference, eps, zero_mean)
    if isinstance(val, Tensor):
        return -ag.mean(val)
    return -float(np.mean(val))
