"""Complex-valued layers: convolution, transposed convolution, batch
normalisation, PReLU, LSTMs and dense heads.

All layers take and return ``ComplexTensor`` values whose planes are autograd
``Tensor``s (training) or plain arrays (inference under ``no_grad``).
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autograd as ag
from . import functional as F
from .autograd import Tensor
from .complex import ComplexTensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(np.array(data), requires_grad=True, name=name)


class Module:
    """Minimal container: parameters and buffers in declaration order."""

    def __init__(self):
        self.training = True
        self._buffers: dict[str, np.ndarray] = {}

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Parameter, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            if isinstance(value, Parameter):
                yield prefix + name, value
            else:
                yield from value.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")

    def set_buffer(self, dotted: str, value: np.ndarray) -> None:
        head, _, rest = dotted.partition(".")
        if not rest:
            if head not in self._buffers:
                raise KeyError(dotted)
            self._buffers[head] = value
            return
        target = getattr(self, head) if not head.isdigit() else None
        if target is None:
            raise KeyError(dotted)
        if isinstance(target, (list, tuple)):
            idx, _, rest = rest.partition(".")
            target = target[int(idx)]
        target.set_buffer(rest, value)

    def modules(self) -> Iterator[Module]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> Module:
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> Module:
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def astype(self, dtype) -> Module:
        """Cast parameters and buffers in place (e.g. float64 for grad checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            m._buffers = {k: (v.astype(dtype) if v.dtype.kind == "f" else v)
                          for k, v in m._buffers.items()}
        return self


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype, scale: float = 1.0) -> np.ndarray:
    bound = scale * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _bias(b: Tensor, ndim: int) -> Tensor:
    return b.reshape((1, -1) + (1,) * (ndim - 2))


class ComplexConv2d(Module):
    """Complex 2-D convolution over [B, C, F, T] built from four real convs.

    out.re = x.re*W_r - x.im*W_i, out.im = x.re*W_i + x.im*W_r, plus a complex
    bias. Channel counts are complex channels (one real plus one imaginary
    feature map each).
    """

    def __init__(self, in_ch: int, out_ch: int, kernel=(5, 2), stride=(2, 1),
                 padding=((2, 2), (1, 0)), *, rng=None, dtype=np.float32, name="conv"):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.padding = tuple(kernel), tuple(stride), padding
        shape = (out_ch, in_ch) + self.kernel
        fan_in = in_ch * self.kernel[0] * self.kernel[1]
        self.w_re = Parameter(_uniform(rng, shape, fan_in, dtype, 1 / math.sqrt(2)))
        self.w_im = Parameter(_uniform(rng, shape, fan_in, dtype, 1 / math.sqrt(2)))
        self.b_re = Parameter(np.zeros(out_ch, dtype))
        self.b_im = Parameter(np.zeros(out_ch, dtype))

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(
                f"{self.name}: expected {self.in_ch} complex input channels, got input shape {x.shape}")

        def conv(inp, w):
            return F.conv2d(inp, w, self.stride, self.padding)

        if x.is_real:
            re = conv(x.re, self.w_re)
            im = conv(x.re, self.w_im)
        else:
            re = conv(x.re, self.w_re) - conv(x.im, self.w_im)
            im = conv(x.re, self.w_im) + conv(x.im, self.w_re)
        return ComplexTensor(re + _bias(self.b_re, 4), im + _bias(self.b_im, 4))

    __call__ = forward


class ComplexConvTranspose2d(Module):
    """Complex transposed convolution; weights are [C_in, C_out, kF, kT]."""

    def __init__(self, in_ch: int, out_ch: int, kernel=(5, 2), stride=(2, 1),
                 crop=((2, 1), (1, 0)), *, rng=None, dtype=np.float32, name="deconv"):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride, self.crop = tuple(kernel), tuple(stride), crop
        shape = (in_ch, out_ch) + self.kernel
        # each output sees in_ch * kF * kT / stride taps on average
        fan_in = max(1, in_ch * self.kernel[0] * self.kernel[1] // (self.stride[0] * self.stride[1]))
        self.w_re = Parameter(_uniform(rng, shape, fan_in, dtype, 1 / math.sqrt(2)))
        self.w_im = Parameter(_uniform(rng, shape, fan_in, dtype, 1 / math.sqrt(2)))
        self.b_re = Parameter(np.zeros(out_ch, dtype))
        self.b_im = Parameter(np.zeros(out_ch, dtype))

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(
                f"{self.name}: expected {self.in_ch} complex input channels, got input shape {x.shape}")

        def deconv(inp, w):
            return F.conv_transpose2d(inp, w, self.stride, self.crop)

        if x.is_real:
            re = deconv(x.re, self.w_re)
            im = deconv(x.re, self.w_im)
        else:
            re = deconv(x.re, self.w_re) - deconv(x.im, self.w_im)
            im = deconv(x.re, self.w_im) + deconv(x.im, self.w_re)
        return ComplexTensor(re + _bias(self.b_re, 4), im + _bias(self.b_im, 4))

    __call__ = forward


def whitening_matrix(vrr, vri, vii):
    """Closed-form inverse square root of [[vrr, vri], [vri, vii]].

    Returns (w_rr, w_ri, w_ii) of the symmetric result. Works on arrays or
    Tensors.
    """
    det = vrr * vii - vri * vri
    if isinstance(det, Tensor):
        s = ag.sqrt(det)
        t = ag.sqrt(vrr + vii + 2.0 * s)
    else:
        s = np.sqrt(det)
        t = np.sqrt(vrr + vii + 2.0 * s)
    inv = 1.0 / (s * t)
    return (vii + s) * inv, -vri * inv, (vrr + s) * inv


class ComplexBatchNorm(Module):
    """Complex batch normalisation by 2x2 whitening of (re, im) per channel.

    Train mode centres by the batch mean over every axis but the channel
    axis, multiplies by the inverse square root of the (re, im) covariance
    (plus ``eps`` on the diagonal), then applies the learned symmetric
    2x2 ``gamma`` and 2-vector ``beta``. Running statistics are updated with
    ``momentum`` and used in eval mode.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 *, dtype=np.float32, name="bn"):
        super().__init__()
        self.name = name
        self.channels = channels
        self.momentum, self.eps = momentum, eps
        g = 1 / math.sqrt(2)
        self.gamma_rr = Parameter(np.full(channels, g, dtype))
        self.gamma_ri = Parameter(np.zeros(channels, dtype))
        self.gamma_ii = Parameter(np.full(channels, g, dtype))
        self.beta_r = Parameter(np.zeros(channels, dtype))
        self.beta_i = Parameter(np.zeros(channels, dtype))
        self.register_buffer("running_mean_r", np.zeros(channels, dtype))
        self.register_buffer("running_mean_i", np.zeros(channels, dtype))
        self.register_buffer("running_vrr", np.ones(channels, dtype))
        self.register_buffer("running_vri", np.zeros(channels, dtype))
        self.register_buffer("running_vii", np.ones(channels, dtype))
        self.register_buffer("num_batches_tracked", np.zeros(1, np.int64))

    def _shape(self, x: ComplexTensor) -> tuple[int, ...]:
        return (1, self.channels) + (1,) * (len(x.shape) - 2)

    def eval_affine(self):
        """Per-channel (A, b) so eval output = A @ (x_re, x_im) + b.

        A is returned as (a_rr, a_ri, a_ir, a_ii); all arrays of shape [C].
        """
        if int(self._buffers["num_batches_tracked"][0]) == 0:
            raise RuntimeError(f"{self.name}: eval mode used before any training batch (no running stats)")
        buf = self._buffers
        w_rr, w_ri, w_ii = whitening_matrix(buf["running_vrr"] + self.eps, buf["running_vri"],
                                            buf["running_vii"] + self.eps)
        g_rr, g_ri, g_ii = self.gamma_rr.data, self.gamma_ri.data, self.gamma_ii.data
        a_rr = g_rr * w_rr + g_ri * w_ri
        a_ri = g_rr * w_ri + g_ri * w_ii
        a_ir = g_ri * w_rr + g_ii * w_ri
        a_ii = g_ri * w_ri + g_ii * w_ii
        mr, mi = buf["running_mean_r"], buf["running_mean_i"]
        b_r = self.beta_r.data - (a_rr * mr + a_ri * mi)
        b_i = self.beta_i.data - (a_ir * mr + a_ii * mi)
        return (a_rr, a_ri, a_ir, a_ii), (b_r, b_i)

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"{self.name}: expected {self.channels} channels, got input shape {x.shape}")
        shape = self._shape(x)
        if not self.training and ag.is_grad_enabled():
            # frozen statistics, but gamma and beta stay differentiable (fine-tuning in eval mode)
            if int(self._buffers["num_batches_tracked"][0]) == 0:
                raise RuntimeError(f"{self.name}: eval mode used before any training batch (no running stats)")
            buf = self._buffers
            w_rr, w_ri, w_ii = whitening_matrix(buf["running_vrr"] + self.eps, buf["running_vri"],
                                                buf["running_vii"] + self.eps)
            cr = x.re - buf["running_mean_r"].reshape(shape)
            ci = x.im - buf["running_mean_i"].reshape(shape)
            nr = cr * w_rr.reshape(shape) + ci * w_ri.reshape(shape)
            ni = cr * w_ri.reshape(shape) + ci * w_ii.reshape(shape)
            g_rr, g_ri, g_ii = (p.reshape(shape) for p in (self.gamma_rr, self.gamma_ri, self.gamma_ii))
            re = g_rr * nr + g_ri * ni + self.beta_r.reshape(shape)
            im = g_ri * nr + g_ii * ni + self.beta_i.reshape(shape)
            return ComplexTensor(re, im)
        if not self.training:
            (a_rr, a_ri, a_ir, a_ii), (b_r, b_i) = self.eval_affine()
            xr, xi = x.re, x.im
            re = xr * a_rr.reshape(shape) + xi * a_ri.reshape(shape) + b_r.reshape(shape)
            im = xr * a_ir.reshape(shape) + xi * a_ii.reshape(shape) + b_i.reshape(shape)
            return ComplexTensor(re, im)

        xr = x.re if isinstance(x.re, Tensor) else Tensor(x.re)
        xi = x.im if isinstance(x.im, Tensor) else Tensor(x.im)
        axes = tuple(i for i in range(len(x.shape)) if i != 1)
        mr = ag.mean(xr, axes, keepdims=True)
        mi = ag.mean(xi, axes, keepdims=True)
        cr, ci = xr - mr, xi - mi
        vrr = ag.mean(cr * cr, axes, keepdims=True)
        vii = ag.mean(ci * ci, axes, keepdims=True)
        vri = ag.mean(cr * ci, axes, keepdims=True)
        w_rr, w_ri, w_ii = whitening_matrix(vrr + self.eps, vri, vii + self.eps)
        nr = w_rr * cr + w_ri * ci
        ni = w_ri * cr + w_ii * ci
        g_rr, g_ri, g_ii = (p.reshape(shape) for p in (self.gamma_rr, self.gamma_ri, self.gamma_ii))
        re = g_rr * nr + g_ri * ni + self.beta_r.reshape(shape)
        im = g_ri * nr + g_ii * ni + self.beta_i.reshape(shape)
        self._update_running(mr.data, mi.data, vrr.data, vri.data, vii.data)
        return ComplexTensor(re, im)

    def _update_running(self, mr, mi, vrr, vri, vii) -> None:
        m = self.momentum
        buf = self._buffers
        for key, val in (("running_mean_r", mr), ("running_mean_i", mi), ("running_vrr", vrr),
                         ("running_vri", vri), ("running_vii", vii)):
            buf[key] = ((1 - m) * buf[key] + m * val.reshape(-1)).astype(buf[key].dtype)
        buf["num_batches_tracked"] = buf["num_batches_tracked"] + 1

    __call__ = forward


class PReLU(Module):
    """Real PReLU applied to each plane, one learned slope per channel."""

    def __init__(self, channels: int, init: float = 0.25, *, dtype=np.float32):
        super().__init__()
        self.slope = Parameter(np.full(channels, init, dtype))

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if isinstance(x.re, Tensor) or isinstance(x.im, Tensor):
            return ComplexTensor(ag.prelu(x.re, self.slope, 1), ag.prelu(x.im, self.slope, 1))
        s = self.slope.data.reshape((1, -1) + (1,) * (len(x.shape) - 2))
        return ComplexTensor(np.where(x.re >= 0, x.re, s * x.re), np.where(x.im >= 0, x.im, s * x.im))

    __call__ = forward


class LSTM(Module):
    """Stacked unidirectional LSTM over [B, T, I]; forget bias starts at +1."""

    def __init__(self, input_size: int, hidden: int, layers: int = 1, forget_bias: float = 1.0,
                 *, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.input_size, self.hidden, self.num_layers = input_size, hidden, layers
        bound = 1.0 / math.sqrt(hidden)
        self.w_ih, self.w_hh, self.bias = [], [], []
        for k in range(layers):
            inp = input_size if k == 0 else hidden
            self.w_ih.append(Parameter(rng.uniform(-bound, bound, (inp, 4 * hidden)).astype(dtype)))
            self.w_hh.append(Parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)).astype(dtype)))
            b = np.zeros(4 * hidden, dtype)
            b[hidden:2 * hidden] = forget_bias
            self.bias.append(Parameter(b))

    def forward(self, x, state=None):
        """Returns (outputs [B, T, H], state) with state a list of (h, c) per layer."""
        new_state = []
        out = x
        for k in range(self.num_layers):
            h0, c0 = state[k] if state is not None else (None, None)
            out, hc = F.lstm(out, self.w_ih[k], self.w_hh[k], self.bias[k], h0, c0)
            new_state.append(hc)
        return out, new_state

    def step(self, x: np.ndarray, state):
        """One time step on arrays [B, I]; ``state`` as returned by forward."""
        new_state = []
        out = x
        for k in range(self.num_layers):
            h, c = state[k]
            out, c = F.lstm_step(out, self.w_ih[k].data, self.w_hh[k].data, self.bias[k].data, h, c)
            new_state.append((out, c))
        return out, new_state

    def zero_state(self, batch: int, dtype) -> list:
        return [(np.zeros((batch, self.hidden), dtype), np.zeros((batch, self.hidden), dtype))
                for _ in range(self.num_layers)]

    __call__ = forward


class ComplexLSTM(Module):
    """Stack of complex LSTM layers, each a pair of real LSTMs combined as
    out = (LSTM_r(x_r) - LSTM_i(x_i)) + j(LSTM_i(x_r) + LSTM_r(x_i))."""

    def __init__(self, input_size: int, hidden: int, layers: int = 1, forget_bias: float = 1.0,
                 *, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.hidden, self.num_layers = hidden, layers
        self.lstm_r, self.lstm_i = [], []
        for k in range(layers):
            inp = input_size if k == 0 else hidden
            self.lstm_r.append(LSTM(inp, hidden, 1, forget_bias, rng=rng, dtype=dtype))
            self.lstm_i.append(LSTM(inp, hidden, 1, forget_bias, rng=rng, dtype=dtype))

    def forward(self, x: ComplexTensor, state=None):
        """x planes [B, T, I]. State per layer: (state_r, state_i), each holding
        the (h, c) of its sub-LSTM over the stacked [x_r; x_i] batch."""
        bsz = x.shape[0]
        new_state = []
        xr, xi = x.re, x.im
        for k in range(self.num_layers):
            st_r, st_i = state[k] if state is not None else (None, None)
            both = ag.concat([xr, xi], 0) if _any_tensor(xr, xi) else np.concatenate([xr, xi], 0)
            out_r, hc_r = self.lstm_r[k](both, st_r)
            out_i, hc_i = self.lstm_i[k](both, st_i)
            f_rr, f_ir = out_r[:bsz], out_r[bsz:]
            f_ri, f_ii = out_i[:bsz], out_i[bsz:]
            xr, xi = f_rr - f_ii, f_ri + f_ir
            new_state.append((hc_r, hc_i))
        return ComplexTensor(xr, xi), new_state

    def step(self, xr: np.ndarray, xi: np.ndarray, state):
        bsz = xr.shape[0]
        new_state = []
        for k in range(self.num_layers):
            st_r, st_i = state[k]
            both = np.concatenate([xr, xi], 0)
            out_r, st_r = self.lstm_r[k].step(both, st_r)
            out_i, st_i = self.lstm_i[k].step(both, st_i)
            xr = out_r[:bsz] - out_i[bsz:]
            xi = out_i[:bsz] + out_r[bsz:]
            new_state.append((st_r, st_i))
        return xr, xi, new_state

    def zero_state(self, batch: int, dtype) -> list:
        return [(self.lstm_r[k].zero_state(2 * batch, dtype), self.lstm_i[k].zero_state(2 * batch, dtype))
                for k in range(self.num_layers)]

    __call__ = forward


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


class Dense(Module):
    """Real affine map on the last axis: x @ W + b."""

    def __init__(self, in_features: int, out_features: int, *, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.weight = Parameter(_uniform(rng, (in_features, out_features), in_features, dtype))
        self.bias = Parameter(np.zeros(out_features, dtype))

    def forward(self, x):
        if isinstance(x, Tensor):
            return ag.matmul(x, self.weight) + self.bias
        return x @ self.weight.data + self.bias.data

    __call__ = forward


class ComplexDense(Module):
    """Complex affine map on the last axis with the same combination rule as
    the complex convolution."""

    def __init__(self, in_features: int, out_features: int, *, rng=None, dtype=np.float32):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        shape = (in_features, out_features)
        self.w_re = Parameter(_uniform(rng, shape, in_features, dtype, 1 / math.sqrt(2)))
        self.w_im = Parameter(_uniform(rng, shape, in_features, dtype, 1 / math.sqrt(2)))
        self.b_re = Parameter(np.zeros(out_features, dtype))
        self.b_im = Parameter(np.zeros(out_features, dtype))

    def forward(self, x: ComplexTensor) -> ComplexTensor:
        if _any_tensor(x.re, x.im):
            mm = ag.matmul
            wr, wi, br, bi = self.w_re, self.w_im, self.b_re, self.b_im
        else:
            mm = np.matmul
            wr, wi, br, bi = self.w_re.data, self.w_im.data, self.b_re.data, self.b_im.data
        if x.is_real:
            return ComplexTensor(mm(x.re, wr) + br, mm(x.re, wi) + bi)
        re = mm(x.re, wr) - mm(x.im, wi) + br
        im = mm(x.re, wi) + mm(x.im, wr) + bi
        return ComplexTensor(re, im)

    __call__ = forward
