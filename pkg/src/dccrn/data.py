"""Audio plumbing: WAV I/O, SNR-controlled mixing, RIR convolution and the
seeded dynamic-mixing iterator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.io import wavfile
from scipy.signal import fftconvolve

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
TRAIN_SNR_RANGE = (-5.0, 20.0)
EVAL_SNR_GRID = (0.0, 5.0, 10.0, 15.0, 20.0)
PCM16_SCALE = 32768.0


class DataError(ValueError):
    """Invalid or unreadable audio / manifest input."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples)
        if x.ndim != 1:
            raise DataError(f"audio must be mono (1-D), got array of shape {x.shape}")
        if x.dtype.kind != "f":
            raise DataError(f"samples must be floating point, got {x.dtype}")
        if not np.all(np.isfinite(x)):
            raise DataError("audio contains non-finite samples")
        if x.size and np.max(np.abs(x)) > 1.0:
            raise DataError(f"samples must lie in [-1, 1], peak is {np.max(np.abs(x)):.4f}")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _samples(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, AudioClip) else x, dtype=np.float64)


def rms(x) -> float:
    x = _samples(x)
    return math.sqrt(float(np.mean(x * x))) if x.size else 0.0


# -- WAV ----------------------------------------------------------------------

def read_wav(path, expected_rate: int | None = SAMPLE_RATE) -> AudioClip:
    """Mono 16-bit PCM or 32-bit float WAV as an ``AudioClip``."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise DataError(f"{path}: file not found") from None
    except (ValueError, OSError) as err:
        raise DataError(f"{path}: not a readable WAV file ({err})") from None
    if data.ndim != 1:
        raise DataError(f"{path}: expected 1 channel, found {data.shape[1]}")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data
    else:
        raise DataError(f"{path}: unsupported encoding {data.dtype} (need 16-bit PCM or 32-bit float)")
    try:
        return AudioClip(np.ascontiguousarray(samples), int(rate))
    except DataError as err:
        raise DataError(f"{path}: {err}") from None


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write ``clip`` as 32-bit float (lossless) or 16-bit PCM."""
    x = np.asarray(clip.samples)
    if encoding == "float32":
        data = x.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(x.astype(np.float64) * PCM16_SCALE), -32768, 32767).astype(np.int16)
    else:
        raise DataError(f"unknown WAV encoding {encoding!r}; use 'float32' or 'pcm16'")
    wavfile.write(Path(path), clip.sample_rate, data)


# -- mixing ---------------------------------------------------------------------

def noise_gain(speech, noise, snr_db: float) -> float:
    """alpha such that speech + alpha * noise has the requested SNR."""
    rs, rn = rms(speech), rms(noise)
    if rs == 0:
        raise DataError("speech is silent (all zero); SNR undefined")
    if rn == 0:
        raise DataError("noise is silent (all zero); SNR undefined")
    return rs / (rn * 10.0 ** (snr_db / 20.0))


def fit_noise(noise, length: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Noise of exactly ``length`` samples: tiled from a random circular offset
    when short, a random excerpt when long (offset 0 without ``rng``)."""
    n = _samples(noise)
    if n.size == 0:
        raise DataError("noise clip is empty")
    if len(n) >= length:
        start = int(rng.integers(len(n) - length + 1)) if rng is not None else 0
        return n[start:start + length]
    start = int(rng.integers(len(n))) if rng is not None else 0
    reps = -(-(start + length) // len(n))
    return np.tile(n, reps)[start:start + length]


def mix_at_snr(speech, noise, snr_db: float, rng: np.random.Generator | None = None):
    """Returns (mixture, clean_reference) as float64 arrays.

    The noise segment is scaled to the requested SNR (whole-clip RMS) and
    added. If the mixture would clip, both outputs are divided by its peak so
    the clean reference stays exactly the speech component of the mixture.
    """
    s = _samples(speech)
    n = fit_noise(noise, len(s), rng)
    alpha = noise_gain(s, n, snr_db)
    mixture = s + alpha * n
    peak = float(np.max(np.abs(mixture)))
    if peak > 1.0:
        return mixture / peak, s / peak
    return mixture, s.copy()


def convolve_rir(speech, rir) -> np.ndarray:
    """Reverberant speech: FIR convolution truncated to the input length,
    rescaled to the input's peak."""
    s, h = _samples(speech), _samples(rir)
    if h.size == 0:
        raise DataError("room impulse response is empty")
    if h.size >= s.size:
        raise DataError(f"room impulse response ({h.size} samples) must be shorter than the signal ({s.size})")
    out = fftconvolve(s, h)[:len(s)]
    peak_in, peak_out = np.max(np.abs(s)), np.max(np.abs(out))
    if peak_out == 0:
        raise DataError("convolution produced silence (all-zero impulse response?)")
    return out * (peak_in / peak_out)


# -- manifests and dynamic mixing -----------------------------------------------

LIST_FILES = ("speech.lst", "noise.lst", "rir.lst")


@dataclass(frozen=True)
class Manifest:
    """Three path lists; entries are relative to the manifest directory."""

    root: Path
    speech: tuple[Path, ...]
    noise: tuple[Path, ...]
    rir: tuple[Path, ...]

    @classmethod
    def load(cls, directory) -> Manifest:
        root = Path(directory)
        if not root.is_dir():
            raise DataError(f"{root}: manifest directory not found")
        lists = []
        for name in LIST_FILES:
            path = root / name
            if not path.exists():
                if name == "rir.lst":
                    lists.append(())
                    continue
                raise DataError(f"{path}: manifest list missing")
            entries = []
            for line in path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if line and not line.startswith("#"):
                    entries.append(root / line)
            lists.append(tuple(entries))
        speech, noise, rir = lists
        if not speech:
            raise DataError(f"{root / 'speech.lst'}: no entries")
        if not noise:
            raise DataError(f"{root / 'noise.lst'}: no entries")
        return cls(root, speech, noise, rir)

    def missing(self) -> list[Path]:
        return [p for p in self.speech + self.noise + self.rir if not p.exists()]


@lru_cache(maxsize=256)
def _cached_read(path: str) -> np.ndarray:
    return read_wav(path).samples


class DynamicMixer:
    """Endless (or ``count``-long) stream of freshly drawn mixtures.

    Every draw picks speech, noise, optional RIRs and an SNR from one
    generator seeded with ``epoch_seed``, so (manifest, seed) fixes the whole
    stream. Training draws SNR uniformly from [-5, 20] dB; evaluation cycles
    through the fixed grid. Unreadable clips are skipped and counted in
    ``skipped``.
    """

    MAX_CONSECUTIVE_FAILURES = 100

    def __init__(self, manifest: Manifest, epoch_seed: int, *, mode: str = "train",
                 segment: int | None = None, count: int | None = None,
                 reverb: bool = True, noise_rir: str = "independent"):
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        if noise_rir not in ("independent", "same", "none"):
            raise ValueError(f"noise_rir must be independent, same or none, got {noise_rir!r}")
        self.manifest = manifest
        self.seed = epoch_seed
        self.mode = mode
        self.segment = segment
        self.count = count
        self.reverb = reverb and bool(manifest.rir)
        self.noise_rir = noise_rir
        self.skipped = 0
        self.snrs: list[float] = []

    def _read(self, path: Path):
        try:
            return _cached_read(str(path))
        except DataError as err:
            self.skipped += 1
            log.warning("skipping clip: %s (skipped so far: %d)", err, self.skipped)
            return None

    def _crop(self, x: np.ndarray, rng) -> np.ndarray:
        if self.segment is None:
            return x
        if len(x) >= self.segment:
            start = int(rng.integers(len(x) - self.segment + 1))
            return x[start:start + self.segment]
        return np.pad(x, (0, self.segment - len(x)))

    def _draw(self, rng, index: int):
        m = self.manifest
        speech = self._read(m.speech[int(rng.integers(len(m.speech)))])
        noise = self._read(m.noise[int(rng.integers(len(m.noise)))])
        rir_s = rir_n = None
        if self.reverb:
            rir_s = self._read(m.rir[int(rng.integers(len(m.rir)))])
            if self.noise_rir == "independent":
                rir_n = self._read(m.rir[int(rng.integers(len(m.rir)))])
            elif self.noise_rir == "same":
                rir_n = rir_s
        if self.mode == "train":
            snr = float(rng.uniform(*TRAIN_SNR_RANGE))
        else:
            snr = EVAL_SNR_GRID[index % len(EVAL_SNR_GRID)]
        if speech is None or noise is None or (self.reverb and rir_s is None) or (
                self.noise_rir == "independent" and self.reverb and rir_n is None):
            return None
        try:
            s = self._crop(np.asarray(speech, np.float64), rng)
            if rir_s is not None:
                s = convolve_rir(s, rir_s)
            n = fit_noise(noise, len(s), rng)
            if rir_n is not None:
                n = convolve_rir(n, rir_n)
            mixture, clean = mix_at_snr(s, n, snr, rng)
        except DataError as err:
            self.skipped += 1
            log.warning("skipping mixture: %s (skipped so far: %d)", err, self.skipped)
            return None
        self.snrs.append(snr)
        return mixture.astype(np.float32), clean.astype(np.float32)

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        rng = np.random.default_rng(self.seed)
        produced = failures = 0
        while self.count is None or produced < self.count:
            pair = self._draw(rng, produced)
            if pair is None:
                failures += 1
                if failures >= self.MAX_CONSECUTIVE_FAILURES:
                    raise DataError(f"{failures} consecutive unreadable draws; check the manifest files")
                continue
            failures = 0
            produced += 1
            yield pair


def dynamic_mix_iterator(manifest: Manifest, epoch_seed: int, **kwargs) -> DynamicMixer:
    return DynamicMixer(manifest, epoch_seed, **kwargs)
