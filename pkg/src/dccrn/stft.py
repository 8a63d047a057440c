"""STFT analysis/synthesis as fixed DFT-kernel convolutions.

Analysis frames the waveform at stride ``hop`` and projects every frame onto
windowed cosine/sine kernels (a strided 1-D convolution). Synthesis is the
matching deconvolution: inverse-DFT kernels times the synthesis window,
overlap-added and divided by the summed window product.

Normalisation: the forward transform is the unnormalised DFT of the windowed
frame, so for a frame x_w the one-sided energy
``sum_k c_k |X_k|^2 / N`` (c_0 = c_{N/2} = 1, else 2) equals ``sum_n x_w[n]^2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import functional as F
from .autograd import Tensor, matmul, pad
from .complex import ComplexTensor

WINDOWS = ("sqrt_hann", "hann", "rect")


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    win_len: int = 400
    hop: int = 100
    fft_len: int = 512
    window: str = "sqrt_hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.win_len <= self.fft_len:
            raise ValueError(
                f"need 0 < hop <= win_len <= fft_len, got hop={self.hop} "
                f"win_len={self.win_len} fft_len={self.fft_len}")
        if self.fft_len % 2:
            raise ValueError(f"fft_len must be even, got {self.fft_len}")
        if self.window not in WINDOWS:
            raise ValueError(f"unknown window {self.window!r}; choose from {WINDOWS}")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    def n_frames(self, length: int) -> int:
        """Frames produced for ``length`` samples (no centre padding)."""
        if length < self.win_len:
            return 1
        return (length - self.win_len) // self.hop + 1


def make_window(name: str, n: int) -> np.ndarray:
    """Periodic window of length ``n`` in float64."""
    if name == "rect":
        return np.ones(n)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    return np.sqrt(hann) if name == "sqrt_hann" else hann


@dataclass
class ComplexSpectrogram:
    """Complex bins [..., F, T] plus the config that produced them."""

    bins: ComplexTensor
    config: StftConfig

    @property
    def shape(self) -> tuple[int, ...]:
        return self.bins.shape

    @property
    def n_frames(self) -> int:
        return self.shape[-1]


class Stft:
    """Fixed-kernel analysis/synthesis pair for one ``StftConfig``.

    Stateless after construction; ``analyze`` and ``synthesize`` are pure.
    """

    def __init__(self, config: StftConfig | None = None, dtype=np.float32):
        self.config = config or StftConfig()
        cfg = self.config
        self.dtype = np.dtype(dtype)
        n, w = cfg.fft_len, cfg.win_len
        window = make_window(cfg.window, w)
        # analysis and synthesis use the same window
        self.window = window
        self.ola_gain = self._check_cola(window * window, cfg.hop)

        k = np.arange(cfg.n_bins)[:, None]
        t = np.arange(w)[None, :]
        ang = 2 * np.pi * k * t / n
        # [W, F] so frames @ kernel gives [..., T, F]
        self.kernel_re = (window * np.cos(ang)).T.astype(self.dtype)
        self.kernel_im = (-window * np.sin(ang)).T.astype(self.dtype)
        # one-sided inverse DFT folded with the synthesis window: [F, W]
        c = np.full((cfg.n_bins, 1), 2.0)
        c[0] = c[-1] = 1.0
        self.inv_re = (c * np.cos(ang) * window / n).astype(self.dtype)
        self.inv_im = (-c * np.sin(ang) * window / n).astype(self.dtype)

    @staticmethod
    def _check_cola(wprod: np.ndarray, hop: int) -> float:
        total = np.zeros(hop)
        for start in range(0, len(wprod), hop):
            seg = wprod[start:start + hop]
            total[:len(seg)] += seg
        if total.max() <= 0 or np.ptp(total) > 1e-9 * total.max():
            raise ValueError(
                f"window/hop pair violates constant overlap-add (ripple {np.ptp(total):.3g}); "
                "choose a hop that divides the window evenly")
        return float(total.mean())

    # -- analysis ----------------------------------------------------------
    def _pad_short(self, wave):
        length = wave.shape[-1]
        if length >= self.config.win_len:
            return wave
        widths = [(0, 0)] * (wave.ndim - 1) + [(0, self.config.win_len - length)]
        return np.pad(wave, widths)

    def analyze(self, wave) -> ComplexSpectrogram:
        """Spectrogram [..., F, T] of a real waveform [..., L].

        Frame t covers samples [t*hop, t*hop + win_len); a wave shorter than
        one window yields a single zero-padded frame.
        """
        if isinstance(wave, Tensor):
            frames = F.frame(wave, self.config.win_len, self.config.hop)
            re = matmul(frames, self.kernel_re).transpose(*_swap_last(frames.ndim))
            im = matmul(frames, self.kernel_im).transpose(*_swap_last(frames.ndim))
            return ComplexSpectrogram(ComplexTensor(re, im), self.config)
        wave = np.asarray(wave, dtype=self.dtype)
        if not np.all(np.isfinite(wave)):
            raise ValueError("waveform contains non-finite samples")
        wave = self._pad_short(wave)
        frames = sliding_window_view(wave, self.config.win_len, axis=-1)[..., ::self.config.hop, :]
        re = np.swapaxes(frames @ self.kernel_re, -1, -2)
        im = np.swapaxes(frames @ self.kernel_im, -1, -2)
        return ComplexSpectrogram(
            ComplexTensor(np.ascontiguousarray(re), np.ascontiguousarray(im)), self.config)

    # -- synthesis ---------------------------------------------------------
    def frames_from_bins(self, re, im):
        """Windowed time frames [..., T, W] from bins [..., F, T]."""
        if isinstance(re, Tensor) or isinstance(im, Tensor):
            axes = _swap_last(re.ndim)
            return matmul(re.transpose(*axes) if isinstance(re, Tensor) else np.swapaxes(re, -1, -2),
                          self.inv_re) + matmul(
                im.transpose(*axes) if isinstance(im, Tensor) else np.swapaxes(im, -1, -2),
                self.inv_im)
        return np.swapaxes(re, -1, -2) @ self.inv_re + np.swapaxes(im, -1, -2) @ self.inv_im

    def norm(self, n_frames: int) -> np.ndarray:
        """Per-sample sum of window products over ``n_frames`` overlapping frames."""
        wprod = (self.window * self.window)[None, :].repeat(n_frames, 0)
        return F._overlap_add(wprod, self.config.hop, (n_frames - 1) * self.config.hop + self.config.win_len)

    def synthesize(self, spec):
        """Overlap-add inverse of ``analyze``; returns [..., (T-1)*hop + win_len].

        Samples covered by fewer frames than the steady state (the first and
        last win_len - hop) are normalised by their actual window sum; where
        that sum vanishes the output is zero.
        """
        bins = spec.bins if isinstance(spec, ComplexSpectrogram) else spec
        if bins.shape[-2] != self.config.n_bins:
            raise ValueError(
                f"spectrogram has {bins.shape[-2]} bins, config expects {self.config.n_bins}")
        frames = self.frames_from_bins(bins.re, bins.im)
        n = bins.shape[-1]
        norm = self.norm(n)
        floor = 1e-3 * self.ola_gain
        inv = np.where(norm > floor, 1.0 / np.maximum(norm, floor), 0.0).astype(self.dtype)
        if isinstance(frames, Tensor):
            return F.overlap_add(frames, self.config.hop) * inv
        length = (n - 1) * self.config.hop + self.config.win_len
        return F._overlap_add(frames, self.config.hop, length) * inv


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def remove_dc(spec):
    """Drop frequency bin 0 (input [..., F, T] -> [..., F-1, T])."""
    bins = spec.bins if isinstance(spec, ComplexSpectrogram) else spec
    if bins.shape[-2] < 2:
        raise ValueError(f"remove_dc needs at least 2 bins, got {bins.shape[-2]}")
    out = bins.map(lambda p: p[..., 1:, :])
    return ComplexSpectrogram(out, spec.config) if isinstance(spec, ComplexSpectrogram) else out


def restore_dc(spec):
    """Re-insert a zero DC row (input [..., F-1, T] -> [..., F, T])."""
    bins = spec.bins if isinstance(spec, ComplexSpectrogram) else spec

    def grow(p):
        widths = [(0, 0)] * (len(bins.shape) - 2) + [(1, 0), (0, 0)]
        if isinstance(p, Tensor):
            return pad(p, widths)
        return np.pad(p, widths)

    out = ComplexTensor(grow(bins.re), grow(bins.im))
    return ComplexSpectrogram(out, spec.config) if isinstance(spec, ComplexSpectrogram) else out
