import re

import numpy as np
import pytest

import dccrn.functional as F
from dccrn import checkpoint
from dccrn.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, EXIT_VERIFY, main
from dccrn.data import AudioClip, read_wav, rms, write_wav
from dccrn.synthetic import toy_example
from dccrn.verify import gradient_checks

ERROR_LINE = re.compile(r"^dccrn-error: [a-z]+: \S.*$")


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def assert_single_error_line(err):
    lines = [line for line in err.splitlines() if line.startswith("dccrn-error")]
    assert len(lines) == 1 and ERROR_LINE.match(lines[0])


@pytest.fixture(scope="module")
def ckpt(tmp_path_factory):
    from dccrn.model import DCCRN, ModelConfig
    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    rng = np.random.default_rng(4)
    model = DCCRN(ModelConfig.tiny("E"), seed=1).calibrate(
        np.stack([toy_example(rng, 8000).mixture for _ in range(2)]))
    checkpoint.save(model, path)
    return path


@pytest.fixture
def noisy_wav(tmp_path):
    ex = toy_example(np.random.default_rng(8), 12345)
    path = tmp_path / "noisy.wav"
    write_wav(path, AudioClip(ex.mixture.astype(np.float32)))
    return path


def test_usage_errors_exit_1(capsys):
    code, _, err = run_cli(capsys)
    assert code == EXIT_USAGE
    assert_single_error_line(err)
    code, _, err = run_cli(capsys, "frobnicate")
    assert code == EXIT_USAGE and err.startswith("dccrn-error: usage:")
    code, _, err = run_cli(capsys, "verify", "--suite", "nonsense")
    assert code == EXIT_USAGE and "unknown suite" in err


def test_config_errors_exit_1(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("optim.lr = -3\n")
    code, _, err = run_cli(capsys, "param-count", str(cfg))
    assert code == EXIT_USAGE and err.startswith("dccrn-error: config: optim.lr")
    assert_single_error_line(err)


def test_param_count(capsys, tmp_path):
    cfg = tmp_path / "e.cfg"
    cfg.write_text("model.preset = default\nmodel.variant = E\n")
    code, out, _ = run_cli(capsys, "param-count", str(cfg))
    assert code == EXIT_OK and out.strip() == "variant=E parameters=3980994"


def test_enhance_offline_and_streaming_agree(capsys, tmp_path, ckpt, noisy_wav):
    off, st = tmp_path / "off.wav", tmp_path / "st.wav"
    assert run_cli(capsys, "enhance", str(ckpt), str(noisy_wav), str(off))[0] == EXIT_OK
    assert run_cli(capsys, "enhance", str(ckpt), str(noisy_wav), str(st), "--streaming")[0] == EXIT_OK
    a, b = read_wav(off).samples, read_wav(st).samples
    assert len(a) == len(b) == len(read_wav(noisy_wav))
    assert np.max(np.abs(a - b)) <= 1e-5


def test_enhance_pcm16_output(capsys, tmp_path, ckpt, noisy_wav):
    out = tmp_path / "o16.wav"
    assert run_cli(capsys, "enhance", str(ckpt), str(noisy_wav), str(out), "--encoding", "pcm16")[0] == EXIT_OK
    assert len(read_wav(out)) == 12345


def test_silence_in_near_silence_out(capsys, tmp_path, ckpt):
    quiet = tmp_path / "quiet.wav"
    x = (1e-4 * np.random.default_rng(0).standard_normal(8000)).astype(np.float32)
    write_wav(quiet, AudioClip(x))
    out = tmp_path / "q_out.wav"
    assert run_cli(capsys, "enhance", str(ckpt), str(quiet), str(out))[0] == EXIT_OK
    assert rms(read_wav(out)) <= rms(x)
    zero = tmp_path / "zero.wav"
    write_wav(zero, AudioClip(np.zeros(8000, np.float32)))
    assert run_cli(capsys, "enhance", str(ckpt), str(zero), str(out))[0] == EXIT_OK
    assert rms(read_wav(out)) == 0.0


def test_enhance_data_errors_exit_2(capsys, tmp_path, ckpt, noisy_wav):
    code, _, err = run_cli(capsys, "enhance", str(ckpt), str(tmp_path / "none.wav"), str(tmp_path / "o.wav"))
    assert code == EXIT_DATA and err.startswith("dccrn-error: data:")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(ckpt.read_bytes().replace(b"version=1", b"version=2", 1))
    code, _, err = run_cli(capsys, "enhance", str(bad), str(noisy_wav), str(tmp_path / "o.wav"))
    assert code == EXIT_DATA and err.startswith("dccrn-error: checkpoint:") and "version 2" in err
    assert_single_error_line(err)


def parse_report(out):
    return dict(line.split("=", 1) for line in out.split() if "=" in line)


def test_bench_report_and_monotonicity(capsys, ckpt):
    code, out, _ = run_cli(capsys, "bench", "tiny", "--seconds", "1")
    tiny = parse_report(out)
    assert code == EXIT_OK and float(tiny["lookahead_ms"]) == 12.5  # two look-ahead layers
    _, out, _ = run_cli(capsys, "bench", "default", "--seconds", "1")
    default = parse_report(out)
    assert float(default["lookahead_ms"]) == 37.5 and float(default["hop_ms"]) == 6.25
    for key in ("frame_ms_mean", "frame_ms_p95", "rtf", "frames", "parameters"):
        assert key in default
    assert float(tiny["frame_ms_mean"]) < float(default["frame_ms_mean"])
    assert run_cli(capsys, "bench", str(ckpt), "--seconds", "0.5")[0] == EXIT_OK


def test_bench_non_timing_fields_are_reproducible(capsys):
    fields = ("variant", "parameters", "frames", "hop_ms", "lookahead_ms")
    reports = []
    for _ in range(2):
        _, out, _ = run_cli(capsys, "bench", "tiny", "--seconds", "0.5", "--seed", "3")
        rep = parse_report(out)
        reports.append({k: rep[k] for k in fields})
    assert reports[0] == reports[1]


def test_verify_subset_passes_and_enumerates(capsys):
    code, out, _ = run_cli(capsys, "verify", "--suite", "si_snr", "--suite", "mixer")
    assert code == EXIT_OK
    checks = [line for line in out.splitlines() if line.startswith(("PASS", "FAIL"))]
    assert checks and all("measured=" in line and "tolerance" in line for line in checks)
    assert "summary passed=" in out


def corrupt_conv_backward(monkeypatch):
    original = F.conv2d

    def conv2d(*args, **kwargs):
        out = original(*args, **kwargs)
        inner = out._backward
        if inner is not None:
            def backward(g):
                gx, gw = inner(g)
                return gx, None if gw is None else gw * 1.05
            out._backward = backward
        return out

    monkeypatch.setattr(F, "conv2d", conv2d)


def test_verify_negative_control_conv_backward(monkeypatch, capsys):
    corrupt_conv_backward(monkeypatch)
    failed = [r.name for r in gradient_checks() if not r.passed]
    assert any("conv" in name for name in failed)
    code, _, err = run_cli(capsys, "verify", "--suite", "gradients")
    assert code == EXIT_VERIFY
    assert_single_error_line(err)
