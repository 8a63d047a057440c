"""Central finite-difference checking of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_err: float
    checked: int
    worst_param: str
    kinks: int = 0

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_err <= tol


def rel_err(analytic: float, numeric: float, floor: float = 1e-5) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero grads from
    amplifying finite-difference round-off."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    names: Sequence[str] | None = None,
    n_samples: int | None = None,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-5,
    kink_tol: float | None = 1e-4,
) -> GradCheckResult:
    """Compare backward() against central differences for float64 ``params``.

    ``loss_fn`` must rebuild the graph on each call. With ``n_samples`` set,
    that many (param, index) coordinates are drawn at random; otherwise every
    coordinate is checked.

    A PReLU or max kink lying within ``step`` of a coordinate spoils the
    central difference. When the central error exceeds ``kink_tol``, the
    one-sided differences are tried too and the best agreement counts; such
    coordinates are tallied in ``kinks``. ``kink_tol=None`` disables this.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradient checks need float64 parameters")
        p.grad = None
    names = list(names) if names is not None else [f"p{i}" for i in range(len(params))]
    loss = loss_fn()
    base = float(loss.data)
    grads = [g.copy() for g in backward(loss, params)]

    coords: list[tuple[int, tuple[int, ...]]] = []
    if n_samples is None:
        for k, p in enumerate(params):
            coords.extend((k, idx) for idx in np.ndindex(p.shape))
    else:
        rng = np.random.default_rng(seed)
        sizes = np.array([p.size for p in params], dtype=float)
        for _ in range(n_samples):
            k = int(rng.choice(len(params), p=sizes / sizes.sum()))
            flat = int(rng.integers(params[k].size))
            coords.append((k, np.unravel_index(flat, params[k].shape)))

    worst, worst_name, kinks = 0.0, "", 0
    for k, idx in coords:
        p = params[k]
        orig = p.data[idx]
        p.data[idx] = orig + step
        up = float(loss_fn().data)
        p.data[idx] = orig - step
        down = float(loss_fn().data)
        p.data[idx] = orig
        numeric = (up - down) / (2 * step)
        analytic = float(grads[k][idx])
        err = rel_err(analytic, numeric, floor)
        if kink_tol is not None and err > kink_tol:
            sided = min(rel_err(analytic, (up - base) / step, floor),
                        rel_err(analytic, (base - down) / step, floor))
            if sided < err:
                err = sided
                kinks += sided <= kink_tol
        if err > worst:
            worst, worst_name = err, f"{names[k]}{list(idx)}"
    for p in params:
        p.grad = None
    return GradCheckResult(worst, len(coords), worst_name, int(kinks))
