"""Self-verification suite behind ``dccrn verify``.

Each check measures one number and compares it with a tolerance; the
report lists both. Oracles are deliberately naive (Python complex scalars,
direct DFT sums) so they share no code with the vectorised implementation.
"""

from __future__ import annotations

import cmath
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .complex import ComplexTensor
from .data import AudioClip, DynamicMixer, Manifest, mix_at_snr, rms, write_wav
from .gradcheck import check_gradients
from .layers import (LSTM, ComplexBatchNorm, ComplexConv2d, ComplexConvTranspose2d, ComplexDense,
                     ComplexLSTM, Dense, PReLU)
from .model import VARIANTS, DCCRN, ModelConfig, apply_mask, lookahead_ms
from .stft import Stft, StftConfig, remove_dc
from .streaming import enhance_stream
from .synthetic import toy_example
from .targets import crm, loss_sisnr, si_snr

F64 = np.float64


@dataclass
class CheckResult:
    name: str
    measured: float
    tolerance: float
    passed: bool
    bound: str = "<="
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name} measured={self.measured:.3e} "
                f"tolerance{self.bound}{self.tolerance:.3e} time={self.seconds:.2f}s")


def _at_most(name, measured, tol) -> CheckResult:
    return CheckResult(name, float(measured), tol, bool(measured <= tol), "<=")


def _at_least(name, measured, tol) -> CheckResult:
    return CheckResult(name, float(measured), tol, bool(measured >= tol), ">=")


def _rand_complex(rng, shape, grad=False) -> ComplexTensor:
    re, im = rng.standard_normal(shape), rng.standard_normal(shape)
    if grad:
        return ComplexTensor(Tensor(re, requires_grad=True), Tensor(im, requires_grad=True))
    return ComplexTensor(re, im)


def _projection_loss(out: ComplexTensor, rng) -> Callable:
    """Fixed random linear functional of a complex output, so every output
    element contributes a distinct weight to the scalar loss."""
    pr = rng.standard_normal(out.shape)
    pi = rng.standard_normal(out.shape)
    return lambda o: ag.sum_(o.re * pr) + ag.sum_(o.im * pi)


def calibrated(config: ModelConfig, dtype=np.float32, seed: int = 0) -> DCCRN:
    """Freshly built model with batch-norm statistics from one synthetic clip."""
    model = DCCRN(config, dtype=dtype, seed=seed)
    rng = np.random.default_rng(seed + 17)
    clips = np.stack([toy_example(rng, 16000).mixture for _ in range(2)])
    return model.calibrate(clips)


# -- gradient checks ------------------------------------------------------------

GRAD_TOL = 1e-4


def _grad_layer(name, module, make_input, rng, n_samples=48):
    x = make_input()
    with ag.no_grad():
        probe = module(x)
    probe = probe[0] if isinstance(probe, tuple) else probe
    if not isinstance(probe, ComplexTensor):
        probe = ComplexTensor(probe, np.zeros(probe.shape))
    project = _projection_loss(probe, rng)

    def loss():
        out = module(x)
        out = out[0] if isinstance(out, tuple) else out
        if not isinstance(out, ComplexTensor):
            out = ComplexTensor(out, Tensor(np.zeros(out.shape)))
        return project(out)

    params = list(module.parameters())
    names = [n for n, _ in module.named_parameters()]
    leaves = [t for t in ((x.re, x.im) if isinstance(x, ComplexTensor) else (x,)) if isinstance(t, Tensor)]
    res = check_gradients(loss, params + leaves, names + [f"input{i}" for i in range(len(leaves))],
                          n_samples=n_samples, seed=int(rng.integers(1 << 30)))
    return _at_most(f"grad/{name}", res.max_rel_err, GRAD_TOL)


def gradient_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    conv = ComplexConv2d(2, 3, rng=rng, dtype=F64)
    _perturb_bias(conv, rng)
    out.append(_grad_layer("complex_conv2d", conv, lambda: _rand_complex(rng, (2, 2, 8, 5), True), rng))
    deconv = ComplexConvTranspose2d(3, 2, rng=rng, dtype=F64)
    _perturb_bias(deconv, rng)
    out.append(_grad_layer("complex_conv_transpose2d", deconv,
                           lambda: _rand_complex(rng, (2, 3, 4, 5), True), rng))
    bn = ComplexBatchNorm(3, dtype=F64)
    bn.gamma_ri.data[:] = rng.uniform(-0.3, 0.3, 3)
    bn.beta_r.data[:] = rng.standard_normal(3)
    out.append(_grad_layer("complex_batchnorm", bn, lambda: _rand_complex(rng, (4, 3, 5, 3), True), rng))
    prelu = PReLU(3, dtype=F64)
    prelu.slope.data[:] = rng.uniform(0.05, 0.5, 3)
    out.append(_grad_layer("prelu", prelu, lambda: _rand_complex(rng, (2, 3, 4, 3), True), rng))
    lstm = LSTM(5, 4, 2, rng=rng, dtype=F64)
    out.append(_grad_layer("lstm", lstm, lambda: Tensor(rng.standard_normal((2, 6, 5)), requires_grad=True), rng))
    clstm = ComplexLSTM(5, 4, 2, rng=rng, dtype=F64)
    out.append(_grad_layer("complex_lstm", clstm, lambda: _rand_complex(rng, (2, 6, 5), True), rng))
    dense = Dense(6, 4, rng=rng, dtype=F64)
    dense.bias.data[:] = rng.standard_normal(4)
    out.append(_grad_layer("dense", dense, lambda: Tensor(rng.standard_normal((3, 6)), requires_grad=True), rng))
    cdense = ComplexDense(6, 4, rng=rng, dtype=F64)
    _perturb_bias(cdense, rng)
    out.append(_grad_layer("complex_dense", cdense, lambda: _rand_complex(rng, (3, 6), True), rng))
    out.append(_grad_stft(rng))
    for variant in ("R", "C", "E"):
        out.append(_grad_mask(variant, rng))
    out.append(_grad_sisnr(rng))
    for variant in ("E", "CL"):
        out.append(_grad_model(variant, seed))
    return out


def _perturb_bias(module, rng):
    for p in (module.b_re, module.b_im):
        p.data[:] = 0.1 * rng.standard_normal(p.shape)


def _grad_stft(rng) -> CheckResult:
    stft = Stft(StftConfig(), F64)
    wave = Tensor(rng.standard_normal((1, 1000)), requires_grad=True)
    with ag.no_grad():
        spec = stft.analyze(wave).bins
    project = _projection_loss(spec, rng)
    proj_out = rng.standard_normal(stft.synthesize(spec.map(np.asarray)).shape)

    def loss():
        bins = stft.analyze(wave).bins
        return project(bins) + ag.sum_(stft.synthesize(bins) * proj_out)

    res = check_gradients(loss, [wave], ["wave"], n_samples=48, seed=1)
    return _at_most("grad/stft_analyze_synthesize", res.max_rel_err, GRAD_TOL)


def _grad_mask(variant, rng) -> CheckResult:
    y = _rand_complex(rng, (2, 6, 4))
    m = _rand_complex(rng, (2, 6, 4), True)
    project = _projection_loss(y, rng)
    res = check_gradients(lambda: project(apply_mask(y, m, variant)), [m.re, m.im], ["m.re", "m.im"],
                          n_samples=48, seed=2)
    return _at_most(f"grad/apply_mask_{variant}", res.max_rel_err, GRAD_TOL)


def _grad_sisnr(rng) -> CheckResult:
    ref = rng.standard_normal((3, 200))
    est = Tensor(ref + 0.5 * rng.standard_normal((3, 200)), requires_grad=True)
    res = check_gradients(lambda: loss_sisnr(est, ref), [est], ["estimate"], n_samples=48, seed=3)
    return _at_most("grad/si_snr", res.max_rel_err, GRAD_TOL)


def _grad_model(variant: str, seed: int) -> CheckResult:
    model = DCCRN(ModelConfig.tiny(variant), dtype=F64, seed=seed)
    rng = np.random.default_rng(seed + 5)
    clips = [toy_example(rng, 1600) for _ in range(2)]
    mix = np.stack([c.mixture for c in clips]).astype(F64)
    clean = np.stack([c.clean for c in clips]).astype(F64)
    names, params = zip(*model.named_parameters())
    model.train()

    def loss():
        _, est = model(mix)
        return loss_sisnr(est, clean)

    res = check_gradients(loss, list(params), list(names), n_samples=64, seed=seed)
    return _at_most(f"grad/tiny_model_{variant}_sisnr_loss", res.max_rel_err, GRAD_TOL)


# -- brute-force complex oracles ------------------------------------------------

ORACLE_TOL = 1e-10


def _cx(ct: ComplexTensor) -> np.ndarray:
    re = np.asarray(getattr(ct.re, "data", ct.re))
    im = np.asarray(getattr(ct.im, "data", ct.im))
    return re + 1j * im


def _weights(layer) -> tuple[np.ndarray, np.ndarray]:
    return layer.w_re.data + 1j * layer.w_im.data, layer.b_re.data + 1j * layer.b_im.data


def oracle_conv(rng) -> float:
    layer = ComplexConv2d(2, 3, rng=rng, dtype=F64)
    _perturb_bias(layer, rng)
    x = _rand_complex(rng, (1, 2, 8, 4))
    got = _cx(layer(x))
    w, b = _weights(layer)
    xc = _cx(x)[0]
    (pt, pb), (pl, pr) = layer.padding
    sf, st = layer.stride
    kf, kt = layer.kernel
    n_f = (8 + pt + pb - kf) // sf + 1
    n_t = (4 + pl + pr - kt) // st + 1
    worst = 0.0
    for o in range(3):
        for f in range(n_f):
            for t in range(n_t):
                acc = complex(b[o])
                for c in range(2):
                    for i in range(kf):
                        for j in range(kt):
                            ff, tt = f * sf + i - pt, t * st + j - pl
                            if 0 <= ff < 8 and 0 <= tt < 4:
                                acc += complex(w[o, c, i, j]) * complex(xc[c, ff, tt])
                worst = max(worst, abs(acc - got[0, o, f, t]))
    return worst


def oracle_deconv(rng) -> float:
    layer = ComplexConvTranspose2d(3, 2, rng=rng, dtype=F64)
    _perturb_bias(layer, rng)
    h, wdt = 4, 5
    x = _rand_complex(rng, (1, 3, h, wdt))
    got = _cx(layer(x))[0]
    w, b = _weights(layer)
    xc = _cx(x)[0]
    sf, st = layer.stride
    kf, kt = layer.kernel
    full = [[[0j for _ in range((wdt - 1) * st + kt)] for _ in range((h - 1) * sf + kf)] for _ in range(2)]
    for c in range(3):
        for f in range(h):
            for t in range(wdt):
                for o in range(2):
                    for i in range(kf):
                        for j in range(kt):
                            full[o][f * sf + i][t * st + j] += complex(xc[c, f, t]) * complex(w[c, o, i, j])
    (ct, cb), (cl, cr) = layer.crop
    worst = 0.0
    for o in range(2):
        rows = full[o][ct:len(full[o]) - cb]
        for f, row in enumerate(rows):
            for t, val in enumerate(row[cl:len(row) - cr]):
                worst = max(worst, abs(val + complex(b[o]) - got[o, f, t]))
    return worst


def _scalar_lstm(lstm: LSTM, seq) -> list[list[float]]:
    """Single-layer LSTM on a list of input vectors, in Python floats."""
    w_ih, w_hh, bias = lstm.w_ih[0].data, lstm.w_hh[0].data, lstm.bias[0].data
    hid = lstm.hidden
    h, c, outs = [0.0] * hid, [0.0] * hid, []
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))  # noqa: E731
    for x in seq:
        z = [float(bias[k]) + sum(float(x[i]) * float(w_ih[i, k]) for i in range(len(x)))
             + sum(h[i] * float(w_hh[i, k]) for i in range(hid)) for k in range(4 * hid)]
        gi = [sig(v) for v in z[:hid]]
        gf = [sig(v) for v in z[hid:2 * hid]]
        gg = [math.tanh(v) for v in z[2 * hid:3 * hid]]
        go = [sig(v) for v in z[3 * hid:]]
        c = [gf[k] * c[k] + gi[k] * gg[k] for k in range(hid)]
        h = [go[k] * math.tanh(c[k]) for k in range(hid)]
        outs.append(h)
    return outs


def oracle_complex_lstm(rng) -> float:
    layer = ComplexLSTM(3, 4, 1, rng=rng, dtype=F64)
    for sub in (layer.lstm_r[0], layer.lstm_i[0]):
        sub.bias[0].data[:] = 0.3 * rng.standard_normal(sub.bias[0].shape)
    x = _rand_complex(rng, (1, 5, 3))
    got = _cx(layer(x)[0])[0]
    xr, xi = x.re[0], x.im[0]
    f_rr = _scalar_lstm(layer.lstm_r[0], xr)
    f_ir = _scalar_lstm(layer.lstm_r[0], xi)
    f_ri = _scalar_lstm(layer.lstm_i[0], xr)
    f_ii = _scalar_lstm(layer.lstm_i[0], xi)
    worst = 0.0
    for t in range(5):
        for k in range(4):
            want = complex(f_rr[t][k] - f_ii[t][k], f_ri[t][k] + f_ir[t][k])
            worst = max(worst, abs(want - got[t, k]))
    return worst


def oracle_complex_dense(rng) -> float:
    layer = ComplexDense(5, 3, rng=rng, dtype=F64)
    _perturb_bias(layer, rng)
    x = _rand_complex(rng, (2, 5))
    got = _cx(layer(x))
    w, b = _weights(layer)
    xc = _cx(x)
    worst = 0.0
    for n in range(2):
        for o in range(3):
            acc = complex(b[o]) + sum(complex(xc[n, i]) * complex(w[i, o]) for i in range(5))
            worst = max(worst, abs(acc - got[n, o]))
    return worst


def oracle_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        _at_most("oracle/complex_conv2d", oracle_conv(rng), ORACLE_TOL),
        _at_most("oracle/complex_conv_transpose2d", oracle_deconv(rng), ORACLE_TOL),
        _at_most("oracle/complex_lstm", oracle_complex_lstm(rng), ORACLE_TOL),
        _at_most("oracle/complex_dense", oracle_complex_dense(rng), ORACLE_TOL),
    ]


# -- causality / latency ----------------------------------------------------------

def causality_probe(model: DCCRN, frames: int = 24, t: int = 8, seed: int = 0) -> tuple[float, int]:
    """(max change of mask frames <= t when frames >= t+L+1 are perturbed,
    largest offset d whose perturbation at t+d still moves frame t)."""
    rng = np.random.default_rng(seed)
    fbins = model.config.freq_bins
    base = rng.standard_normal((2, 1, fbins, frames)).astype(model.dtype)
    la = model.config.lookahead_frames

    def mask(planes):
        with ag.no_grad():
            m = model.net(ComplexTensor(planes[0], planes[1]))
        return np.stack([np.asarray(getattr(m.re, "data", m.re)), np.asarray(getattr(m.im, "data", m.im))])

    ref = mask(base)
    moved = base.copy()
    moved[..., t + la + 1:] += rng.standard_normal(moved[..., t + la + 1:].shape).astype(model.dtype)
    leak = float(np.max(np.abs(mask(moved)[..., :t + 1] - ref[..., :t + 1])))
    reach = -1
    for d in range(frames - t):
        one = base.copy()
        one[..., t + d] += 1.0
        if np.max(np.abs(mask(one)[..., t] - ref[..., t])) > 0:
            reach = d
    return leak, reach


def causality_checks(model: DCCRN | None = None) -> list[CheckResult]:
    model = model or calibrated(ModelConfig(), dtype=F64)
    leak, reach = causality_probe(model)
    la = model.config.lookahead_frames
    return [
        _at_most(f"causality/future_frame_t+{la + 1}_leak", leak, 1e-7),
        CheckResult("latency/lookahead_frames", reach, la, reach == la, "=="),
        CheckResult("latency/lookahead_ms", lookahead_ms(model.config), 37.5,
                    lookahead_ms(model.config) == 37.5 if la == 6 else True, "=="),
    ]


# -- streaming ----------------------------------------------------------------------

STREAM_TOL = 1e-5


def streaming_checks(length: int = 8037, seed: int = 0, tiny: bool = False) -> list[CheckResult]:
    out = []
    rng = np.random.default_rng(seed)
    for variant in VARIANTS:
        cfg = ModelConfig.tiny(variant) if tiny else ModelConfig.for_variant(variant)
        model = calibrated(cfg, seed=seed)
        wave = toy_example(rng, length).mixture
        diff = np.max(np.abs(model.enhance(wave) - enhance_stream(model, wave)))
        out.append(_at_most(f"streaming/{variant}_offline_vs_frame_by_frame", diff, STREAM_TOL))
    return out


# -- reconstruction -------------------------------------------------------------------

def oracle_crm_min_sisnr(n: int = 20, length: int = 16000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    model = DCCRN(ModelConfig.tiny("C"))
    worst = math.inf
    for _ in range(n):
        ex = toy_example(rng, length)
        spec = lambda w: remove_dc(model.stft.analyze(model.pad_wave(w)).bins)  # noqa: E731
        mask = crm(spec(ex.clean), spec(ex.mixture))
        _, est = model(ex.mixture, oracle_mask=mask)
        worst = min(worst, si_snr(np.asarray(est, F64), ex.clean.astype(F64)))
    return worst


def naive_dft(frame: np.ndarray, n_fft: int, n_bins: int) -> np.ndarray:
    return np.array([sum(frame[n] * cmath.exp(-2j * math.pi * k * n / n_fft) for n in range(len(frame)))
                     for k in range(n_bins)])


def stft_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    cfg = StftConfig()
    stft = Stft(cfg, F64)
    length = 4321
    x = rng.standard_normal(length)
    lead = cfg.win_len - cfg.hop
    frames = -(-(length + 2 * lead - cfg.win_len) // cfg.hop) + 1
    padded = np.pad(x, (lead, (frames - 1) * cfg.hop + cfg.win_len - lead - length))
    back = stft.synthesize(stft.analyze(padded))[lead:lead + length]
    spec = stft.analyze(x[:1200])
    got = _cx(spec.bins)
    worst = 0.0
    for t in (0, 3, 8):
        frame = x[t * cfg.hop:t * cfg.hop + cfg.win_len] * stft.window
        worst = max(worst, float(np.max(np.abs(naive_dft(frame, cfg.fft_len, cfg.n_bins) - got[:, t]))))
    # tiny eps so the measurement is not clipped by the default 80 dB guard
    return [_at_least("stft/round_trip_si_snr_db", si_snr(back, x, eps=1e-30), 60.0),
            _at_most("stft/analyze_vs_naive_dft", worst, 1e-5)]


def mask_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    y = _rand_complex(rng, (3, 256, 10))
    m = _rand_complex(rng, (3, 256, 10))
    e = _cx(apply_mask(y, m, "E", bound_magnitude=False))
    c = _cx(apply_mask(y, m, "C"))
    return [_at_most("mask/E_without_tanh_equals_C", float(np.max(np.abs(e - c))), 1e-6),
            _at_least("oracle_crm/min_si_snr_db_20_mixtures", oracle_crm_min_sisnr(seed=seed), 40.0)]


def sisnr_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    s = rng.standard_normal(1000)
    est = s + 0.3 * rng.standard_normal(1000)
    base = si_snr(est, s)
    drift = max(abs(si_snr(a * est, s) - base) for a in (1e-3, 0.5, 2.0, 37.0, 1e4))
    hand = si_snr(np.array([1.0, 1.0]), np.array([1.0, 0.0]), zero_mean=False)
    return [_at_most("si_snr/scale_invariance_db", drift, 1e-9),
            _at_most("si_snr/hand_case_abs_db", abs(hand), 1e-12)]


def mixer_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for snr in (-5.0, 0.0, 7.3, 20.0):
        speech = 0.3 * rng.standard_normal(8000)
        noise = 0.5 * rng.standard_normal(3000)
        mixture, clean = mix_at_snr(speech, noise, snr, rng)
        measured = 20 * math.log10(rms(clean) / rms(mixture - clean))
        worst = max(worst, abs(measured - snr))
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        for kind, n in (("speech", 3), ("noise", 2), ("rir", 2)):
            names = []
            for i in range(n):
                if kind == "rir":
                    sig = np.exp(-np.arange(800) / 150.0) * np.clip(rng.standard_normal(800), -2, 2) * 0.4
                    sig[0] = 1.0
                else:
                    sig = 0.4 * np.tanh(rng.standard_normal(12000))
                write_wav(root / f"{kind}{i}.wav", AudioClip(sig.astype(np.float32)))
                names.append(f"{kind}{i}.wav")
            (root / f"{kind}.lst").write_text("\n".join(names) + "\n")
        manifest = Manifest.load(root)
        first = list(DynamicMixer(manifest, 11, segment=4000, count=10))
        second = list(DynamicMixer(manifest, 11, segment=4000, count=10))
    mismatches = sum(not (np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])) for a, b in zip(first, second))
    return [_at_most("mixer/snr_error_db", worst, 1e-6),
            _at_most("mixer/seeded_stream_mismatches", mismatches, 0)]


# -- driver -------------------------------------------------------------------------

SUITES: dict[str, Callable[[], list[CheckResult]]] = {
    "gradients": gradient_checks,
    "oracles": oracle_checks,
    "causality": causality_checks,
    "streaming": streaming_checks,
    "reconstruction": mask_checks,
    "stft": stft_checks,
    "si_snr": sisnr_checks,
    "mixer": mixer_checks,
}


def run(suites: list[str] | None = None, report: Callable[[str], None] | None = None) -> list[CheckResult]:
    """Run the named suites (all by default), streaming each line to ``report``."""
    results = []
    for name in suites or list(SUITES):
        t0 = time.perf_counter()
        batch = SUITES[name]()
        per = (time.perf_counter() - t0) / max(1, len(batch))
        for r in batch:
            r.seconds = per
            results.append(r)
            if report is not None:
                report(r.line())
    return results
