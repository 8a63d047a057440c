import functools

import numpy as np
import pytest

from dccrn.model import DCCRN, ModelConfig
from dccrn.synthetic import toy_example

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, title: str, passed: bool, detail: str) -> None:
    """Collect one criterion line; printed again in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@functools.lru_cache(maxsize=None)
def _calibrated(variant: str, size: str, dtype: str) -> DCCRN:
    cfg = ModelConfig.tiny(variant) if size == "tiny" else ModelConfig.for_variant(variant)
    model = DCCRN(cfg, dtype=np.dtype(dtype), seed=7)
    r = np.random.default_rng(99)
    return model.calibrate(np.stack([toy_example(r, 16000).mixture for _ in range(2)]))


@pytest.fixture
def calibrated():
    """Factory for eval-mode models with batch-norm statistics (cached)."""
    def make(variant="E", size="tiny", dtype="float32"):
        return _calibrated(variant, size, dtype)
    return make
