import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dccrn import autograd as ag
from dccrn.autograd import Tensor
from dccrn.complex import ComplexTensor, magnitude
from dccrn.gradcheck import check_gradients


def leaf(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


def test_sum_gives_all_ones(rng):
    x = leaf(rng, 3, 4)
    ag.backward(ag.sum_(x))
    assert np.array_equal(x.grad, np.ones((3, 4)))


def test_squared_magnitude_gradient_is_twice_the_planes(rng):
    re, im = leaf(rng, 5), leaf(rng, 5)
    mag = magnitude(ComplexTensor(re, im))
    ag.backward(ag.sum_(mag * mag))
    np.testing.assert_allclose(re.grad, 2 * re.data, rtol=1e-12)
    np.testing.assert_allclose(im.grad, 2 * im.data, rtol=1e-12)


def test_non_scalar_loss_rejected(rng):
    with pytest.raises(ValueError, match="scalar"):
        ag.backward(leaf(rng, 2, 2) * 2.0)


def test_unused_parameter_gets_exact_zero(rng):
    used, unused = leaf(rng, 3), leaf(rng, 3)
    grads = ag.backward(ag.sum_(used * used), [used, unused])
    assert np.array_equal(grads[1], np.zeros(3))


def test_shared_node_visited_once_and_accumulates(rng):
    x = leaf(rng, 4)
    y = x * 3.0
    loss = ag.sum_(y * y + y)  # y feeds two consumers
    ag.backward(loss)
    np.testing.assert_allclose(x.grad, 3.0 * (2 * 3.0 * x.data + 1.0), rtol=1e-12)


def test_no_grad_builds_no_graph(rng):
    x = leaf(rng, 3)
    with ag.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._backward is None


UNARY = {
    "exp": (ag.exp, False), "log": (ag.log, True), "sqrt": (ag.sqrt, True), "tanh": (ag.tanh, False),
    "sigmoid": (ag.sigmoid, False), "sin": (ag.sin, False), "cos": (ag.cos, False),
    "log10": (ag.log10, True), "square": (lambda a: a ** 2, False), "neg": (lambda a: -a, False),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_gradients(name, rng):
    fn, positive = UNARY[name]
    x = leaf(rng, 3, 4, positive=positive)
    w = rng.standard_normal((3, 4))
    res = check_gradients(lambda: ag.sum_(fn(x) * w), [x], kink_tol=None)
    assert res.ok(1e-6), res


BINARY = {
    "add": lambda a, b: a + b, "sub": lambda a, b: a - b, "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b, "atan2": ag.atan2, "hypot": ag.hypot, "maximum": ag.maximum,
}


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_op_gradients_with_broadcasting(name, rng):
    a = leaf(rng, 3, 4, positive=True)
    b = leaf(rng, 1, 4, positive=True)
    b.data += 0.37  # keep maximum away from ties
    w = rng.standard_normal((3, 4))
    res = check_gradients(lambda: ag.sum_(BINARY[name](a, b) * w), [a, b], kink_tol=None)
    assert res.ok(1e-6), res


def test_shape_ops_gradients(rng):
    x = leaf(rng, 2, 3, 4)
    y = leaf(rng, 2, 3, 4)
    w = rng.standard_normal((3, 2, 10))

    def loss():
        t = ag.transpose(x, (1, 0, 2))
        cat = ag.concat([t, ag.transpose(y, (1, 0, 2))[..., :2], ag.pad(t[..., :2], [(0, 0), (0, 0), (1, 1)])], 2)
        return ag.sum_(cat * w) + ag.sum_(ag.mean(ag.stack([x, y], 0), 0) ** 2)

    res = check_gradients(loss, [x, y], kink_tol=None)
    assert res.ok(1e-6), res


def test_matmul_and_reshape_gradients(rng):
    a = leaf(rng, 2, 3, 4)
    b = leaf(rng, 4, 5)
    w = rng.standard_normal((6, 5))
    res = check_gradients(lambda: ag.sum_(ag.matmul(a, b).reshape(6, 5) * w), [a, b], kink_tol=None)
    assert res.ok(1e-6), res


def test_prelu_gradient_including_slope(rng):
    x = leaf(rng, 2, 3, 5)
    x.data[np.abs(x.data) < 0.05] = 0.3  # stay off the kink
    slope = Tensor(np.array([0.1, 0.25, 0.6]), requires_grad=True)
    w = rng.standard_normal((2, 3, 5))
    res = check_gradients(lambda: ag.sum_(ag.prelu(x, slope, 1) * w), [x, slope], kink_tol=None)
    assert res.ok(1e-6), res


def test_kink_detection_rescues_only_genuine_kinks():
    x = Tensor(np.array([2e-6]), requires_grad=True)  # |x| within one step of the kink
    loss = lambda: ag.sum_(ag.maximum(x, 0.0) * 3.0)  # noqa: E731
    strict = check_gradients(loss, [x], kink_tol=None)
    lenient = check_gradients(loss, [x])
    assert not strict.ok() and lenient.ok() and lenient.kinks == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=3), st.integers(0, 2**31 - 1))
def test_unbroadcast_matches_numpy_sum(shape, seed):
    r = np.random.default_rng(seed)
    small = tuple(1 if r.random() < 0.5 else s for s in shape)
    a = Tensor(r.standard_normal(small), requires_grad=True)
    b = r.standard_normal(tuple(shape))
    ag.backward(ag.sum_(a * b))
    axes = tuple(i for i, (s, t) in enumerate(zip(small, shape)) if s == 1 and t != 1)
    np.testing.assert_allclose(a.grad, b.sum(axis=axes, keepdims=True).reshape(small), rtol=1e-12, atol=1e-12)
