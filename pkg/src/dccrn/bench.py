"""Per-frame latency of the streaming path on a synthetic stream."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .model import DCCRN, lookahead_ms
from .streaming import StreamingEngine
from .synthetic import toy_example


@dataclass
class BenchReport:
    frames: int
    mean_ms: float
    p95_ms: float
    max_ms: float
    hop_ms: float
    lookahead_ms: float
    parameters: int
    variant: str

    @property
    def rtf(self) -> float:
        """Mean frame time over the hop duration; below 1 means real time."""
        return self.mean_ms / self.hop_ms

    def lines(self) -> list[str]:
        return [
            f"variant={self.variant}",
            f"parameters={self.parameters}",
            f"frames={self.frames}",
            f"frame_ms_mean={self.mean_ms:.4f}",
            f"frame_ms_p95={self.p95_ms:.4f}",
            f"frame_ms_max={self.max_ms:.4f}",
            f"hop_ms={self.hop_ms:.4f}",
            f"rtf={self.rtf:.4f}",
            f"lookahead_ms={self.lookahead_ms:.4f}",
        ]


def needs_calibration(model: DCCRN) -> bool:
    return any(name.endswith("num_batches_tracked") and int(buf[0]) == 0
               for name, buf in model.named_buffers())


def bench(model: DCCRN, seconds: float = 5.0, seed: int = 0, warmup: int = 20) -> BenchReport:
    """Time ``forward_streaming`` frame by frame over ``seconds`` of audio.

    A model without batch-norm statistics (freshly built) is calibrated on a
    synthetic clip first; the clip and stream are seeded.
    """
    if seconds <= 0:
        raise ValueError(f"seconds must be positive, got {seconds}")
    cfg = model.config.stft
    rng = np.random.default_rng(seed)
    if needs_calibration(model):
        model.calibrate(toy_example(rng, cfg.sample_rate).mixture)
    model.eval()
    engine = StreamingEngine(model)
    n = max(1, int(round(seconds * cfg.sample_rate / cfg.hop)))
    wave = toy_example(rng, (n + warmup) * cfg.hop).mixture.astype(model.dtype)
    state = engine.init_state()
    times = np.empty(n)
    for k in range(warmup):
        engine.forward_streaming(state, wave[k * cfg.hop:(k + 1) * cfg.hop])
    clock = time.perf_counter
    for k in range(n):
        frame = wave[(warmup + k) * cfg.hop:(warmup + k + 1) * cfg.hop]
        t0 = clock()
        engine.forward_streaming(state, frame)
        times[k] = clock() - t0
    ms = times * 1e3
    return BenchReport(
        frames=n, mean_ms=float(ms.mean()), p95_ms=float(np.percentile(ms, 95)), max_ms=float(ms.max()),
        hop_ms=1e3 * cfg.hop / cfg.sample_rate, lookahead_ms=lookahead_ms(model.config),
        parameters=model.num_parameters(), variant=model.config.variant)
