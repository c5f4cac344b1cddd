import numpy as np
import pytest

from convbeam.stft import ConfigInvalid, StftConfig, analyze, synthesize, window

CFG = StftConfig()


def interior(x, cfg=CFG):
    return x[cfg.frame_len:len(x) - cfg.frame_len]


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        StftConfig(frame_len=512, frame_shift=128)
    with pytest.raises(ConfigInvalid):
        StftConfig(window="hamming")
    assert StftConfig.from_ms(32, 16000) == CFG


def test_window_cola():
    w2 = window(CFG) ** 2
    np.testing.assert_allclose(w2[:256] + w2[256:], 1.0, atol=1e-15)


def test_frame_count_and_shape():
    x = np.zeros((1000, 3))
    spec = analyze(x, CFG)
    assert spec.shape == (4, 257, 3)
    assert not spec.any()


def test_bin_centered_sine():
    k = 40
    n = np.arange(16000)
    x = np.sin(2 * np.pi * k * n / CFG.frame_len)
    spec = analyze(x, CFG)[2:-2, :, 0]
    energy = np.abs(spec) ** 2
    # windowed sine spreads into the two neighbouring bins of the Hann kernel;
    # the oracle is the closed-form DFT of sqrt-Hann * sine
    win = window(CFG)
    ref = np.abs(np.fft.rfft(win * np.sin(2 * np.pi * k * np.arange(512) / 512))) ** 2
    frac_ref = ref[k] / ref.sum()
    frac = energy[:, k] / energy.sum(axis=1)
    np.testing.assert_allclose(frac, frac_ref, rtol=1e-6)
    # concentrated around the bin: >= 99% of energy within k +- 1
    assert np.all(energy[:, k - 1:k + 2].sum(axis=1) / energy.sum(axis=1) >= 0.99)


def test_impulse_first_frame():
    x = np.zeros(2048)
    x[0] = 1.0
    spec = analyze(x, CFG)[0, :, 0]
    # impulse sits CFG.lead samples into frame 0 (start padding)
    win = window(CFG)
    np.testing.assert_allclose(np.abs(spec), win[CFG.lead], rtol=1e-12)
    np.testing.assert_allclose(spec, win[CFG.lead] * (-1.0) ** np.arange(257), atol=1e-12)


def test_round_trip_noise():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((16000, 2))
    y = synthesize(analyze(x, CFG), CFG, len(x))
    err = np.linalg.norm(interior(y - x)) / np.linalg.norm(interior(x))
    assert err < 1e-4
    assert 20 * np.log10(err) < -80


def test_round_trip_whole_signal():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(5000)
    y = synthesize(analyze(x, CFG), CFG, len(x))[:, 0]
    np.testing.assert_allclose(y, x, atol=1e-12)


def test_synthesize_zero_and_linear():
    assert not synthesize(np.zeros((10, 257, 2), complex), CFG).any()
    rng = np.random.default_rng(2)
    s = analyze(rng.standard_normal((4000, 1)), CFG)
    np.testing.assert_allclose(synthesize(2.5 * s, CFG), 2.5 * synthesize(s, CFG), atol=1e-12)


def test_parseval():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(8000)
    spec = analyze(x, CFG)[:, :, 0]
    c = np.full(257, 2.0)
    c[[0, -1]] = 1.0
    spec_energy = np.sum(c * np.abs(spec) ** 2) / CFG.frame_len
    # oracle: windowed frames built independently by explicit slicing
    padded = np.concatenate([np.zeros(CFG.lead), x, np.zeros(CFG.frame_len)])
    win = window(CFG)
    time_energy = sum(np.sum((win * padded[t * 256:t * 256 + 512]) ** 2) for t in range(spec.shape[0]))
    assert abs(spec_energy - time_energy) <= 1e-6 * time_energy


def test_linearity():
    rng = np.random.default_rng(4)
    x, y = rng.standard_normal((2, 3000, 2))
    lhs = analyze(0.3 * x - 1.7 * y, CFG)
    rhs = 0.3 * analyze(x, CFG) - 1.7 * analyze(y, CFG)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_short_input_rejected():
    with pytest.raises(ValueError):
        analyze(np.zeros(100), CFG)


def test_mismatched_bins():
    with pytest.raises(ConfigInvalid):
        synthesize(np.zeros((3, 100, 1), complex), CFG)
