"""Reverse-mode differentiation over real numpy arrays.

Complex quantities are carried as two of these nodes (see ``complex.py``), so
every gradient here is an ordinary real gradient on one plane.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A node in the dynamic graph.

    ``data`` is a real ndarray. ``grad`` is allocated lazily by ``backward``
    for leaves created with ``requires_grad=True`` (parameters, probes).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence, backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output, recording parents if any needs a grad."""
    nodes = tuple(p for p in parents if isinstance(p, Tensor))
    track = _GRAD_ENABLED and any(p.requires_grad for p in nodes)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def _needs(x) -> bool:
    return isinstance(x, Tensor) and x.requires_grad


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _shape_of(x) -> tuple[int, ...]:
    return np.shape(_data(x))


# ---------------------------------------------------------------------------
# graph traversal
# ---------------------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if isinstance(p, Tensor) and p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None, free_graph: bool = True):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Each node is visited once, in reverse topological order. When ``params``
    is given, returns a list of their gradients in the same order; params the
    loss does not depend on get exact zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {}
    order = _topo_order(loss) if loss.requires_grad else []
    if order:
        grads[id(loss)] = np.ones_like(loss.data)
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not _needs(p):
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    if free_graph:
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
    if params is not None:
        out = []
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            out.append(p.grad)
        return out
    return None


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    sa, sb = np.shape(ad), np.shape(bd)

    def bw(g):
        return (_unbroadcast(g, sa) if _needs(a) else None,
                _unbroadcast(g, sb) if _needs(b) else None)

    return _make(ad + bd, (a, b), bw)


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    sa, sb = np.shape(ad), np.shape(bd)

    def bw(g):
        return (_unbroadcast(g, sa) if _needs(a) else None,
                _unbroadcast(-g, sb) if _needs(b) else None)

    return _make(ad - bd, (a, b), bw)


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    sa, sb = np.shape(ad), np.shape(bd)

    def bw(g):
        return (_unbroadcast(g * bd, sa) if _needs(a) else None,
                _unbroadcast(g * ad, sb) if _needs(b) else None)

    return _make(ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    sa, sb = np.shape(ad), np.shape(bd)
    out = ad / bd

    def bw(g):
        return (_unbroadcast(g / bd, sa) if _needs(a) else None,
                _unbroadcast(-g * out / bd, sb) if _needs(b) else None)

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    return _make(-_data(a), (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    ad = _data(a)

    def bw(g):
        return (g * p * ad ** (p - 1),)

    return _make(ad ** p, (a,), bw)


def exp(a) -> Tensor:
    out = np.exp(_data(a))
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    ad = _data(a)
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    out = np.sqrt(_data(a))
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    out = np.tanh(_data(a))
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    out = _sigmoid(_data(a))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow warnings for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sin(a) -> Tensor:
    ad = _data(a)
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


def cos(a) -> Tensor:
    ad = _data(a)
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


_TINY = 1e-30


def atan2(y, x) -> Tensor:
    """Angle of (x, y) in (-pi, pi]; the gradient at the origin is defined as 0."""
    yd, xd = _data(y), _data(x)
    sy, sx = np.shape(yd), np.shape(xd)

    def bw(g):
        r2 = xd * xd + yd * yd
        inv = np.where(r2 > _TINY, 1.0 / np.maximum(r2, _TINY), 0.0)
        return (_unbroadcast(g * xd * inv, sy) if _needs(y) else None,
                _unbroadcast(-g * yd * inv, sx) if _needs(x) else None)

    return _make(np.arctan2(yd, xd), (y, x), bw)


def hypot(a, b) -> Tensor:
    """sqrt(a**2 + b**2) with a zero subgradient at the origin."""
    ad, bd = _data(a), _data(b)
    sa, sb = np.shape(ad), np.shape(bd)
    out = np.sqrt(ad * ad + bd * bd)

    def bw(g):
        inv = np.where(out > 0, 1.0 / np.where(out > 0, out, 1.0), 0.0)
        return (_unbroadcast(g * ad * inv, sa) if _needs(a) else None,
                _unbroadcast(g * bd * inv, sb) if _needs(b) else None)

    return _make(out, (a, b), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    ad, bd = _data(a), _data(b)
    sa, sb = np.shape(ad), np.shape(bd)
    pick_a = ad >= bd

    def bw(g):
        return (_unbroadcast(np.where(pick_a, g, 0.0), sa) if _needs(a) else None,
                _unbroadcast(np.where(pick_a, 0.0, g), sb) if _needs(b) else None)

    return _make(np.maximum(ad, bd), (a, b), bw)


def log10(a) -> Tensor:
    ad = _data(a)
    return _make(np.log10(ad), (a,), lambda g: (g / (ad * np.log(10.0)),))


def prelu(x, slope, axis: int = 1) -> Tensor:
    """max(x, 0) + slope * min(x, 0) with ``slope`` broadcast along ``axis``."""
    xd, sd = _data(x), _data(slope)
    shape = [1] * xd.ndim
    shape[axis] = -1
    s = np.reshape(sd, shape)
    pos = xd >= 0
    out = np.where(pos, xd, s * xd)

    def bw(g):
        gx = np.where(pos, g, g * s) if _needs(x) else None
        gs = None
        if _needs(slope):
            red = tuple(i for i in range(xd.ndim) if i != axis % xd.ndim)
            gs = np.where(pos, 0.0, g * xd).sum(axis=red).reshape(np.shape(sd))
        return gx, gs

    return _make(out, (x, slope), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    ad = _data(a)
    shape = ad.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(ad, axis=axis, keepdims=keepdims), (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    ad = _data(a)
    shape = ad.shape
    if axis is None:
        n = ad.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([shape[i] for i in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _make(np.mean(ad, axis=axis, keepdims=keepdims), (a,), bw)


def reshape(a, shape) -> Tensor:
    ad = _data(a)
    old = ad.shape
    return _make(ad.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    ad = _data(a)
    if axes is None:
        axes = tuple(reversed(range(ad.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(ad, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    ad = _data(a)

    def bw(g):
        full = np.zeros_like(ad)
        if _fancy(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] = g
        return (full,)

    return _make(ad[idx], (a,), bw)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(items: Sequence, axis: int = 0) -> Tensor:
    arrays = [_data(x) for x in items]
    out = np.concatenate(arrays, axis=axis)
    bounds = np.cumsum([a.shape[axis] for a in arrays])[:-1]

    def bw(g):
        parts = np.split(g, bounds, axis=axis)
        return tuple(p if _needs(x) else None for p, x in zip(parts, items))

    return _make(out, tuple(items), bw)


def stack(items: Sequence, axis: int = 0) -> Tensor:
    arrays = [_data(x) for x in items]

    def bw(g):
        parts = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(p) if _needs(x) else None
                     for p, x in zip(parts, items))

    return _make(np.stack(arrays, axis=axis), tuple(items), bw)


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` is a per-axis list of (before, after)."""
    ad = _data(a)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, ad.shape))
    return _make(np.pad(ad, widths), (a,), lambda g: (g[sl],))


def matmul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)

    def bw(g):
        ga = gb = None
        if _needs(a):
            ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.multiply.outer(g, bd)
            ga = _unbroadcast(ga, ad.shape)
        if _needs(b):
            if ad.ndim == 1:
                gb = np.multiply.outer(ad, g)
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
            gb = _unbroadcast(gb, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), bw)
