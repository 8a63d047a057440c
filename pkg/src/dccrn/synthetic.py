"""Toy corpus for CPU-scale training: harmonic "speech" against white or
babble-like noise.

Speech stand-ins are sums of harmonics over a gliding fundamental, gated by
a syllable-rate envelope. Noise is either white Gaussian or babble-like:
Gaussian noise shaped to a speech-like spectral tilt and modulated at a
syllabic rate. Everything is driven by one ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .data import mix_at_snr

SAMPLE_RATE = 16000


def tonal_speech(rng: np.random.Generator, length: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Harmonic voice with a chirping fundamental and on/off syllables."""
    t = np.arange(length) / sr
    f0_start = rng.uniform(90, 260)
    f0_end = f0_start * rng.uniform(0.7, 1.4)
    wobble = 1 + 0.03 * np.sin(2 * np.pi * rng.uniform(2, 6) * t + rng.uniform(0, 2 * np.pi))
    f0 = (f0_start + (f0_end - f0_start) * t / max(t[-1], 1e-9)) * wobble
    phase = 2 * np.pi * np.cumsum(f0) / sr
    n_harm = int(min(20, (sr / 2 - 200) // max(f0.max(), 1)))
    tilt = rng.uniform(0.6, 0.9)
    voice = np.zeros(length)
    for h in range(1, n_harm + 1):
        voice += tilt ** (h - 1) * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # syllables: smoothed random gate at 3-6 Hz
    rate = rng.uniform(3, 6)
    n_syll = int(np.ceil(t[-1] * rate)) + 2
    gates = (rng.random(n_syll) > 0.25).astype(float)
    env = np.repeat(gates, int(np.ceil(sr / rate)))[:length]
    win = np.hanning(int(0.03 * sr) | 1)
    env = np.convolve(env, win / win.sum(), mode="same")
    out = voice * env
    peak = np.max(np.abs(out))
    if peak == 0:  # all syllables gated off: keep the bare voice
        out, peak = voice, np.max(np.abs(voice))
    return (0.5 * out / peak).astype(np.float32)


def white_noise(rng: np.random.Generator, length: int) -> np.ndarray:
    return (0.3 * rng.standard_normal(length)).astype(np.float32)


def babble_noise(rng: np.random.Generator, length: int, sr: int = SAMPLE_RATE) -> np.ndarray:
    """Speech-shaped, syllabically modulated Gaussian noise."""
    b, a = signal.butter(2, [150, 3500], btype="band", fs=sr)
    base = signal.lfilter(b, a, rng.standard_normal(length))
    t = np.arange(length) / sr
    mod = np.ones(length)
    for _ in range(4):
        mod += 0.4 * np.sin(2 * np.pi * rng.uniform(2, 8) * t + rng.uniform(0, 2 * np.pi))
    out = base * np.clip(mod, 0.1, None)
    return (0.3 * out / (np.std(out) + 1e-12)).astype(np.float32)


@dataclass
class ToyExample:
    mixture: np.ndarray
    clean: np.ndarray
    snr_db: float
    noise_kind: str


def toy_example(rng: np.random.Generator, length: int, snr_range=(-5.0, 20.0),
                snr_db: float | None = None) -> ToyExample:
    clean = tonal_speech(rng, length)
    kind = "white" if rng.random() < 0.5 else "babble"
    noise = white_noise(rng, length) if kind == "white" else babble_noise(rng, length)
    snr = float(rng.uniform(*snr_range)) if snr_db is None else float(snr_db)
    mixture, ref = mix_at_snr(clean, noise, snr, rng=rng)
    return ToyExample(mixture.astype(np.float32), ref.astype(np.float32), snr, kind)


def toy_set(n: int, length: int, seed: int, snr_range=(-5.0, 20.0)) -> tuple[np.ndarray, np.ndarray]:
    """``n`` (mixture, clean) pairs stacked into [n, length] arrays."""
    rng = np.random.default_rng(seed)
    items = [toy_example(rng, length, snr_range) for _ in range(n)]
    return (np.stack([x.mixture for x in items]), np.stack([x.clean for x in items]))
