import math

import numpy as np
import pytest
from scipy import stats
from scipy.io import wavfile

from dccrn.data import (AudioClip, DataError, DynamicMixer, Manifest, convolve_rir, fit_noise, mix_at_snr,
                        noise_gain, read_wav, rms, write_wav)


def snr_db(clean, mixture):
    return 20 * math.log10(rms(clean) / rms(mixture - clean))


# -- mixing ------------------------------------------------------------------------

def test_noise_gain_examples():
    s = np.ones(100)
    n = np.ones(100)
    assert noise_gain(s, n, 0.0) == pytest.approx(1.0)
    assert noise_gain(s, n, 20.0) == pytest.approx(0.1)
    assert noise_gain(s, 2 * n, -20.0) == pytest.approx(5.0)


@pytest.mark.parametrize("snr", [-5.0, -1.25, 0.0, 3.3, 10.0, 20.0])
def test_mixture_snr_is_exact(snr, rng):
    speech = 0.2 * rng.standard_normal(4000)
    noise = 0.4 * rng.standard_normal(1500)  # shorter: exercises tiling
    mixture, clean = mix_at_snr(speech, noise, snr, rng)
    assert abs(snr_db(clean, mixture) - snr) <= 1e-6


def test_clipping_guard_keeps_reference_consistent(rng):
    speech = 0.9 * np.sign(rng.standard_normal(2000))
    mixture, clean = mix_at_snr(speech, rng.standard_normal(2000), -5.0, rng)
    assert np.max(np.abs(mixture)) <= 1.0 + 1e-12
    assert abs(snr_db(clean, mixture) + 5.0) <= 1e-6


def test_silent_inputs_rejected():
    with pytest.raises(DataError, match="speech is silent"):
        noise_gain(np.zeros(10), np.ones(10), 0)
    with pytest.raises(DataError, match="noise is silent"):
        noise_gain(np.ones(10), np.zeros(10), 0)


def test_fit_noise_lengths(rng):
    n = np.arange(7.0)
    assert np.array_equal(fit_noise(n, 3), n[:3])
    assert np.array_equal(fit_noise(n, 10), np.concatenate([n, n[:3]]))
    assert len(fit_noise(n, 50, rng)) == 50
    with pytest.raises(DataError):
        fit_noise(np.zeros(0), 5)


# -- reverberation ---------------------------------------------------------------------

def test_unit_impulse_is_identity(rng):
    s = 0.5 * rng.standard_normal(1000)
    np.testing.assert_allclose(convolve_rir(s, np.array([1.0])), s, atol=1e-12)


def test_delayed_impulse_shifts(rng):
    s = 0.5 * rng.standard_normal(1000)
    h = np.zeros(11)
    h[10] = 0.5
    out = convolve_rir(s, h)
    want = np.concatenate([np.zeros(10), s[:-10]])
    np.testing.assert_allclose(out, want * np.max(np.abs(s)) / np.max(np.abs(want)), atol=1e-12)


def test_convolution_matches_naive_loop(rng):
    s = rng.standard_normal(300)
    h = rng.standard_normal(17)
    direct = np.array([sum(h[k] * s[i - k] for k in range(len(h)) if i - k >= 0) for i in range(len(s))])
    direct *= np.max(np.abs(s)) / np.max(np.abs(direct))
    np.testing.assert_allclose(convolve_rir(s, h), direct, atol=1e-10)


def test_rir_errors(rng):
    with pytest.raises(DataError, match="empty"):
        convolve_rir(np.ones(10), np.zeros(0))
    with pytest.raises(DataError, match="shorter"):
        convolve_rir(np.ones(10), np.ones(10))
    with pytest.raises(DataError, match="silence"):
        convolve_rir(np.ones(10), np.zeros(3))


# -- WAV --------------------------------------------------------------------------------

def test_float32_round_trip_bitwise(tmp_path, rng):
    x = np.clip(0.3 * rng.standard_normal(2000), -1, 1).astype(np.float32)
    write_wav(tmp_path / "a.wav", AudioClip(x))
    back = read_wav(tmp_path / "a.wav")
    assert back.samples.dtype == np.float32 and np.array_equal(back.samples, x)
    assert back.sample_rate == 16000 and back.duration == pytest.approx(0.125)


def test_pcm16_round_trip_within_one_step(tmp_path, rng):
    x = np.clip(0.3 * rng.standard_normal(2000), -1, 1 - 2 ** -15)
    write_wav(tmp_path / "p.wav", AudioClip(x), encoding="pcm16")
    back = read_wav(tmp_path / "p.wav").samples
    assert np.max(np.abs(back - x)) <= 2 ** -15


def test_wav_errors(tmp_path):
    wavfile.write(tmp_path / "stereo.wav", 16000, np.zeros((100, 2), np.float32))
    wavfile.write(tmp_path / "8k.wav", 8000, np.zeros(100, np.float32))
    wavfile.write(tmp_path / "i32.wav", 16000, np.zeros(100, np.int32))
    (tmp_path / "junk.wav").write_bytes(b"not a wav")
    with pytest.raises(DataError, match="1 channel"):
        read_wav(tmp_path / "stereo.wav")
    with pytest.raises(DataError, match="8000 Hz"):
        read_wav(tmp_path / "8k.wav")
    with pytest.raises(DataError, match="unsupported encoding"):
        read_wav(tmp_path / "i32.wav")
    with pytest.raises(DataError, match="not a readable"):
        read_wav(tmp_path / "junk.wav")
    with pytest.raises(DataError, match="not found"):
        read_wav(tmp_path / "nope.wav")
    with pytest.raises(DataError, match="encoding"):
        write_wav(tmp_path / "x.wav", AudioClip(np.zeros(4, np.float32)), encoding="mp3")


def test_audio_clip_validation():
    with pytest.raises(DataError, match="mono"):
        AudioClip(np.zeros((2, 3)))
    with pytest.raises(DataError, match="peak"):
        AudioClip(np.array([1.5]))
    with pytest.raises(DataError, match="non-finite"):
        AudioClip(np.array([np.nan]))
    with pytest.raises(DataError, match="floating"):
        AudioClip(np.array([1, 2]))


# -- manifests and the dynamic mixer -------------------------------------------------------

@pytest.fixture
def corpus(tmp_path):
    rng = np.random.default_rng(0)
    lists = {"speech.lst": [], "noise.lst": [], "rir.lst": []}
    for i in range(3):
        t = np.arange(12000) / 16000
        x = 0.3 * np.sin(2 * np.pi * (150 + 40 * i) * t) * (1 + 0.5 * np.sin(2 * np.pi * 3 * t))
        write_wav(tmp_path / f"s{i}.wav", AudioClip(x.astype(np.float32)))
        lists["speech.lst"].append(f"s{i}.wav")
        write_wav(tmp_path / f"n{i}.wav", AudioClip(np.clip(0.2 * rng.standard_normal(7000), -1, 1)
                                                    .astype(np.float32)))
        lists["noise.lst"].append(f"n{i}.wav")
        h = np.zeros(400)
        h[0] = 1.0
        h[1:] = 0.3 * rng.standard_normal(399) * np.exp(-np.arange(399) / 60)
        write_wav(tmp_path / f"r{i}.wav", AudioClip((h / np.max(np.abs(h))).astype(np.float32)))
        lists["rir.lst"].append(f"r{i}.wav")
    for name, entries in lists.items():
        (tmp_path / name).write_text("# corpus\n" + "\n".join(entries) + "\n")
    return tmp_path


def test_manifest_loads_and_resolves(corpus):
    m = Manifest.load(corpus)
    assert len(m.speech) == len(m.noise) == len(m.rir) == 3
    assert all(p.is_absolute() or p.exists() for p in m.speech)
    assert m.missing() == []


def test_manifest_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        Manifest.load(tmp_path / "absent")
    with pytest.raises(DataError, match="speech.lst"):
        Manifest.load(tmp_path)
    (tmp_path / "speech.lst").write_text("a.wav\n")
    (tmp_path / "noise.lst").write_text("# nothing\n")
    with pytest.raises(DataError, match="no entries"):
        Manifest.load(tmp_path)


def test_rir_list_is_optional(corpus):
    (corpus / "rir.lst").unlink()
    mixer = DynamicMixer(Manifest.load(corpus), 1, count=3, segment=4000)
    assert len(list(mixer)) == 3 and not mixer.reverb


def take(mixer):
    return [(m.copy(), c.copy()) for m, c in mixer]


def test_mixer_is_seed_reproducible(corpus):
    m = Manifest.load(corpus)
    a = take(DynamicMixer(m, 42, count=6, segment=4000))
    b = take(DynamicMixer(m, 42, count=6, segment=4000))
    c = take(DynamicMixer(m, 43, count=6, segment=4000))
    assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))
    assert any(not np.array_equal(x[0], y[0]) for x, y in zip(a, c))


def test_mixer_output_snr_matches_draw(corpus):
    mixer = DynamicMixer(Manifest.load(corpus), 5, count=10, segment=4000)
    pairs = take(mixer)
    for (mix, clean), want in zip(pairs, mixer.snrs):
        mix, clean = mix.astype(np.float64), clean.astype(np.float64)
        assert abs(snr_db(clean, mix) - want) <= 1e-4  # float32 storage


def test_training_snr_draws_are_uniform(corpus):
    mixer = DynamicMixer(Manifest.load(corpus), 9, count=1000, segment=800, reverb=False)
    for _ in mixer:
        pass
    gap = stats.kstest(mixer.snrs, stats.uniform(loc=-5, scale=25).cdf).statistic
    assert gap < 0.08


def test_eval_mode_cycles_fixed_grid(corpus):
    mixer = DynamicMixer(Manifest.load(corpus), 0, mode="eval", count=7, segment=800)
    take(mixer)
    assert mixer.snrs == [0.0, 5.0, 10.0, 15.0, 20.0, 0.0, 5.0]


def test_unreadable_files_are_skipped(corpus):
    (corpus / "n1.wav").write_bytes(b"garbage")
    mixer = DynamicMixer(Manifest.load(corpus), 3, count=20, segment=800, reverb=False)
    assert len(take(mixer)) == 20
    assert mixer.skipped > 0


def test_all_unreadable_raises(corpus):
    for i in range(3):
        (corpus / f"s{i}.wav").write_bytes(b"garbage")
    with pytest.raises(DataError, match="consecutive"):
        take(DynamicMixer(Manifest.load(corpus), 3, count=2, segment=800))


def test_mixer_argument_validation(corpus):
    m = Manifest.load(corpus)
    with pytest.raises(ValueError):
        DynamicMixer(m, 0, mode="test")
    with pytest.raises(ValueError):
        DynamicMixer(m, 0, noise_rir="both")
