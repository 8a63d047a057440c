"""Complex arrays stored as separate real and imaginary planes.

A plane is either a numpy array or an autograd ``Tensor``; the arithmetic
below works on both, so the same code path serves inference and training.
A purely real tensor stores no imaginary plane at all, which is how the
"imaginary part is exactly zero" property survives arithmetic.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def _shape(plane) -> tuple[int, ...]:
    return tuple(np.shape(plane.data if isinstance(plane, Tensor) else plane))


def _freeze(plane):
    if isinstance(plane, np.ndarray):
        view = plane.view()
        view.flags.writeable = False
        return view
    return plane


class ComplexTensor:
    """Immutable pair of real planes ``re`` and ``im`` with identical shape."""

    __slots__ = ("re", "_im")

    def __init__(self, re, im=None):
        if not isinstance(re, Tensor):
            re = np.asarray(re)
            if re.dtype.kind == "c":
                raise TypeError("pass numpy complex arrays through ComplexTensor.from_complex")
        if im is not None:
            if not isinstance(im, Tensor):
                im = np.asarray(im)
            if _shape(re) != _shape(im):
                raise ValueError(
                    f"real and imaginary planes differ in shape: {_shape(re)} vs {_shape(im)}")
        object.__setattr__(self, "re", _freeze(re))
        object.__setattr__(self, "_im", _freeze(im))

    def __setattr__(self, name, value):
        raise AttributeError("ComplexTensor is immutable")

    @classmethod
    def from_complex(cls, z) -> ComplexTensor:
        z = np.asarray(z)
        return cls(np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag))

    @property
    def im(self):
        if self._im is None:
            return np.zeros(_shape(self.re), dtype=_dtype(self.re))
        return self._im

    @property
    def is_real(self) -> bool:
        return self._im is None

    @property
    def shape(self) -> tuple[int, ...]:
        return _shape(self.re)

    @property
    def dtype(self):
        return _dtype(self.re)

    @property
    def requires_grad(self) -> bool:
        return any(isinstance(p, Tensor) and p.requires_grad for p in (self.re, self._im))

    def numpy(self) -> np.ndarray:
        """Values as a numpy complex array (graph dropped)."""
        re = _arr(self.re)
        if self._im is None:
            return re.astype(np.result_type(re.dtype, np.complex64))
        return re + 1j * _arr(self._im)

    def detach(self) -> ComplexTensor:
        return ComplexTensor(_arr(self.re).copy(), None if self._im is None else _arr(self._im).copy())

    def map(self, fn) -> ComplexTensor:
        """Apply a shape operation (slice, reshape, ...) to both planes."""
        return ComplexTensor(fn(self.re), None if self._im is None else fn(self._im))

    def __getitem__(self, idx) -> ComplexTensor:
        return self.map(lambda p: p[idx])

    def __add__(self, other):
        return cadd(self, other)

    def __sub__(self, other):
        return csub(self, other)

    def __mul__(self, other):
        return cmul(self, other)

    def __neg__(self):
        return ComplexTensor(-self.re, None if self._im is None else -self._im)

    def conj(self) -> ComplexTensor:
        return ComplexTensor(self.re, None if self._im is None else -self._im)

    def __repr__(self) -> str:
        kind = "real" if self.is_real else "complex"
        return f"ComplexTensor(shape={self.shape}, {kind}, dtype={self.dtype})"


def _arr(plane) -> np.ndarray:
    return plane.data if isinstance(plane, Tensor) else plane


def _dtype(plane):
    return _arr(plane).dtype


def _check(a: ComplexTensor, b: ComplexTensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def _as_complex(x) -> ComplexTensor:
    if isinstance(x, ComplexTensor):
        return x
    if isinstance(x, Tensor):
        return ComplexTensor(x)
    arr = np.asarray(x)
    if arr.dtype.kind == "c":
        return ComplexTensor.from_complex(arr)
    return ComplexTensor(arr)


def cadd(a, b) -> ComplexTensor:
    a, b = _as_complex(a), _as_complex(b)
    _check(a, b, "cadd")
    if a._im is None:
        im = b._im
    elif b._im is None:
        im = a._im
    else:
        im = a._im + b._im
    if im is not None and _shape(im) != np.broadcast_shapes(a.shape, b.shape):
        im = im + np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=_dtype(im))
    return ComplexTensor(a.re + b.re, im)


def csub(a, b) -> ComplexTensor:
    a, b = _as_complex(a), _as_complex(b)
    _check(a, b, "csub")
    return cadd(a, -b)


def cmul(a, b) -> ComplexTensor:
    """Elementwise complex product (a.re b.re - a.im b.im) + j(a.re b.im + a.im b.re)."""
    a, b = _as_complex(a), _as_complex(b)
    _check(a, b, "cmul")
    if a._im is None and b._im is None:
        return ComplexTensor(a.re * b.re)
    if a._im is None:
        return ComplexTensor(a.re * b.re, a.re * b._im)
    if b._im is None:
        return ComplexTensor(a.re * b.re, a._im * b.re)
    re = a.re * b.re - a._im * b._im
    im = a.re * b._im + a._im * b.re
    return ComplexTensor(re, im)


def magnitude(a: ComplexTensor):
    """sqrt(re^2 + im^2) as a real plane."""
    if a._im is None:
        return ag.hypot(a.re, 0.0) if isinstance(a.re, Tensor) else np.abs(a.re)
    if isinstance(a.re, Tensor) or isinstance(a._im, Tensor):
        return ag.hypot(a.re, a._im)
    return np.sqrt(a.re * a.re + a._im * a._im)


def phase(a: ComplexTensor):
    """arctan2(im, re) in (-pi, pi]."""
    im = a.im
    if isinstance(a.re, Tensor) or isinstance(im, Tensor):
        return ag.atan2(im, a.re)
    return np.arctan2(im, a.re)


def from_polar(mag, angle) -> ComplexTensor:
    """mag * exp(j * angle)."""
    if isinstance(mag, Tensor) or isinstance(angle, Tensor):
        return ComplexTensor(mag * ag.cos(angle), mag * ag.sin(angle))
    return ComplexTensor(mag * np.cos(angle), mag * np.sin(angle))


def concat(items, axis: int) -> ComplexTensor:
    """Concatenate complex tensors along ``axis`` (used for skip connections)."""
    res = [x.re for x in items]
    ims = [x.im for x in items]
    if any(isinstance(p, Tensor) for p in res + ims):
        return ComplexTensor(ag.concat(res, axis), ag.concat(ims, axis))
    return ComplexTensor(np.concatenate(res, axis), np.concatenate(ims, axis))
