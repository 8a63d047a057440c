import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dccrn import autograd as ag
from dccrn.autograd import Tensor
from dccrn.complex import ComplexTensor, cmul
from dccrn.optim import Adam
from dccrn.targets import crm, loss_csa, loss_msa, loss_sisnr, si_snr, smm


def cplx(z):
    return ComplexTensor.from_complex(np.asarray(z, dtype=np.complex128))


def as_np(c):
    return np.asarray(getattr(c.re, "data", c.re)) + 1j * np.asarray(getattr(c.im, "data", c.im))


def test_crm_examples():
    m = crm(cplx([1 + 1j]), cplx([1 + 1j]))
    assert as_np(m.planes)[0] == 1 + 0j
    m = crm(cplx([1j]), cplx([1 + 0j]))
    assert as_np(m.planes)[0] == 1j


def test_crm_matches_complex_division_and_reconstructs(rng):
    s = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    y = rng.standard_normal((5, 7)) + 1j * rng.standard_normal((5, 7))
    m = crm(cplx(s), cplx(y))
    for i in range(5):
        for j in range(7):
            assert abs(as_np(m.planes)[i, j] - complex(s[i, j]) / complex(y[i, j])) <= 1e-12
    np.testing.assert_allclose(as_np(cmul(m.planes, cplx(y))), s, atol=1e-12)


def test_crm_floor_keeps_silent_bins_finite():
    m = crm(cplx([1 + 0j]), cplx([0j]))
    assert np.all(np.isfinite(as_np(m.planes)))


def test_polar_accessors(rng):
    m = crm(cplx([3 + 4j]), cplx([1 + 0j]))
    assert m.mag[0] == pytest.approx(5.0)
    assert m.phase[0] == pytest.approx(math.atan2(4, 3))


def test_smm_examples():
    np.testing.assert_allclose(smm([1.0, 2.0], [2.0, 2.0]), [0.5, 1.0])
    assert np.isfinite(smm([1.0], [0.0])[0])


def test_csa_and_msa_zero_at_oracle(rng):
    s = rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6))
    y = s + 0.3 * (rng.standard_normal((4, 6)) + 1j * rng.standard_normal((4, 6)))
    assert loss_csa(crm(cplx(s), cplx(y)), cplx(y), cplx(s)) <= 1e-20
    assert loss_msa(smm(np.abs(s), np.abs(y)), np.abs(y), np.abs(s)) <= 1e-20
    assert loss_csa(cplx(np.zeros((4, 6))), cplx(y), cplx(s)) == pytest.approx(np.mean(np.abs(s) ** 2))


def test_csa_shape_mismatch():
    with pytest.raises(ValueError):
        loss_csa(cplx(np.ones(3)), cplx(np.ones(3)), cplx(np.ones(4)))


def test_si_snr_hand_case():
    assert abs(si_snr(np.array([1.0, 1.0]), np.array([1.0, 0.0]), zero_mean=False)) <= 1e-12


def test_si_snr_matches_direct_formula(rng):
    s = rng.standard_normal(500)
    e = s + 0.5 * rng.standard_normal(500)
    s0, e0 = s - s.mean(), e - e.mean()
    target = (e0 @ s0) / (s0 @ s0) * s0
    want = 10 * math.log10((target @ target) / ((e0 - target) @ (e0 - target)))
    assert si_snr(e, s) == pytest.approx(want, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_si_snr_scale_invariant(alpha, seed):
    r = np.random.default_rng(seed)
    s = r.standard_normal(256)
    e = s + r.standard_normal(256)
    assert abs(si_snr(alpha * e, s) - si_snr(e, s)) <= 1e-9


def test_si_snr_orthogonal_estimate_is_very_negative():
    t = np.arange(1600) / 16000
    s = np.sin(2 * np.pi * 500 * t)
    e = np.cos(2 * np.pi * 500 * t)
    assert si_snr(e, s) <= -40


def test_si_snr_perfect_estimate_hits_cap(rng):
    s = rng.standard_normal(100)
    assert si_snr(s, s) == pytest.approx(80.0, abs=1e-6)


def test_si_snr_errors():
    with pytest.raises(ValueError, match="all zero"):
        si_snr(np.ones(4), np.zeros(4))
    with pytest.raises(ValueError, match="differ in shape"):
        si_snr(np.ones(4), np.ones(5))


def test_si_snr_batched_and_tensor_agree(rng):
    s = rng.standard_normal((3, 200))
    e = s + rng.standard_normal((3, 200))
    arr = si_snr(e, s)
    node = si_snr(Tensor(e), s)
    np.testing.assert_allclose(node.data, arr, rtol=1e-12)
    assert loss_sisnr(e, s) == pytest.approx(-np.mean(arr))


def test_projection_residual_orthogonal(rng):
    s = rng.standard_normal(300)
    e = rng.standard_normal(300)
    s0, e0 = s - s.mean(), e - e.mean()
    target = (e0 @ s0) / (s0 @ s0) * s0
    assert abs((e0 - target) @ s0) <= 1e-9


def test_sisnr_loss_descends_on_a_toy_problem(rng):
    s = rng.standard_normal(400)
    w = Tensor(0.1 * rng.standard_normal(400), requires_grad=True)
    opt = Adam([w], lr=0.05)
    first = None
    for _ in range(100):
        opt.zero_grad()
        loss = loss_sisnr(w, s)
        ag.backward(loss)
        opt.step()
        first = first if first is not None else float(loss.data)
    assert float(loss_sisnr(w.data, s)) < first - 20
