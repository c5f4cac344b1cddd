import math

import numpy as np
import pytest

from convbeam.metrics import srr
from convbeam.scenario import (
    ScenarioSpec,
    SourceSpec,
    azimuth_position,
    binaural_mic_positions,
    build_scenario,
)
from convbeam.stft import ConfigInvalid, StftConfig, analyze, synthesize
from convbeam.wpe import wpe_init, wpe_run, wpe_step

CFG = StftConfig()


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def single_source(t60, duration=8.0, seed=0, snr_db=30.0):
    spec = ScenarioSpec(
        mic_positions=binaural_mic_positions(),
        sources=[SourceSpec("target1", "target", azimuth_position(20.0), (0.5, duration))],
        t60=t60,
        duration=duration,
        snr_db=snr_db,
        sir_db=math.inf,
        noise_only=(0.0, 0.25),
        noise_plus_interferer=(0.25, 0.5),
        seed=seed,
    )
    return build_scenario(spec)


def test_init():
    s = wpe_init(4, 16, 3, 0.98, 1.0, n_bins=5)
    assert s.inv_corr.shape == (5, 52, 52)
    np.testing.assert_array_equal(s.inv_corr[2], np.eye(52))
    assert not s.pred_filters.any()
    with pytest.raises(ConfigInvalid):
        wpe_init(4, 2, 3, 0.98, 1.0)
    with pytest.raises(ConfigInvalid):
        wpe_init(4, 16, 3, 1.5, 1.0)
    with pytest.raises(ConfigInvalid):
        wpe_init(4, 16, 3, 0.9, 0.0)


def test_first_frame_passthrough():
    rng = np.random.default_rng(0)
    s = wpe_init(3, 8, 2, 0.95, 1.0, n_bins=4)
    y = crandn(rng, 4, 3)
    np.testing.assert_array_equal(wpe_step(s, y), y)


def test_degenerate_length_is_identity():
    rng = np.random.default_rng(1)
    s = wpe_init(2, 3, 3, 0.9, 1.0, n_bins=3)
    spec = crandn(rng, 20, 3, 2)
    np.testing.assert_array_equal(wpe_run(spec, s), spec)


def test_frozen_zero_filters_pass_through():
    rng = np.random.default_rng(2)
    s = wpe_init(2, 6, 2, 0.9, 1.0, n_bins=3)
    s.frozen = True
    spec = crandn(rng, 30, 3, 2)
    np.testing.assert_array_equal(wpe_run(spec, s), spec)


def test_zero_frames():
    rng = np.random.default_rng(3)
    s = wpe_init(2, 6, 2, 0.9, 1.0, n_bins=3)
    wpe_run(crandn(rng, 10, 3, 2), s)
    inv, filt = s.inv_corr.copy(), s.pred_filters.copy()
    z = wpe_step(s, np.zeros((3, 2)))
    # the zero frame still meets a non-zero delayed stack, so only z is checked
    # against the prediction; a stack of zeros leaves the statistics untouched
    s2 = wpe_init(2, 6, 2, 0.9, 1.0, n_bins=3)
    s2.inv_corr, s2.pred_filters = inv.copy(), filt.copy()
    for _ in range(6):
        z = wpe_step(s2, np.zeros((3, 2)))
    np.testing.assert_array_equal(z, 0)
    inv_before, filt_before = s2.inv_corr.copy(), s2.pred_filters.copy()
    wpe_step(s2, np.zeros((3, 2)))
    np.testing.assert_array_equal(s2.inv_corr, inv_before)
    np.testing.assert_array_equal(s2.pred_filters, filt_before)


def test_prediction_skips_recent_frames():
    rng = np.random.default_rng(4)
    m, lw, tau, k = 2, 8, 3, 4
    spec = crandn(rng, 20, k, m)
    outs = []
    for variant in range(2):
        s = wpe_init(m, lw, tau, 0.9, 1.0, n_bins=k)
        s.pred_filters = np.random.default_rng(9).standard_normal(s.pred_filters.shape) + 0j
        s.frozen = True
        x = spec.copy()
        if variant:
            x[17:19] = crandn(rng, 2, k, m)  # frames t-2, t-1 for t = 19
        outs.append(wpe_run(x, s)[19])
    np.testing.assert_array_equal(outs[0], outs[1])


def test_unit_gamma_gaussian_matches_least_squares():
    # gamma = 1, p = 2: the recursion is exact regularized least squares
    rng = np.random.default_rng(5)
    m, lw, tau, n = 2, 6, 2, 60
    reg = 0.5
    spec = crandn(rng, n, 1, m)
    s = wpe_init(m, lw, tau, 1.0, reg, p=2.0, n_bins=1)
    wpe_run(spec, s)
    d = m * (lw - tau)
    a = reg * np.eye(d, dtype=complex)
    b = np.zeros((d, m), complex)
    for t in range(n):
        x = np.concatenate([spec[t - lag, 0] if t - lag >= 0 else np.zeros(m) for lag in range(tau, lw)])
        a += np.outer(x, x.conj())
        b += np.outer(x, spec[t, 0].conj())
    expect = np.linalg.solve(a, b)
    np.testing.assert_allclose(s.pred_filters[0], expect, rtol=1e-8, atol=1e-10)


def run_slow_wpe(spec, p=0.5, t_gamma=1.5):
    # a window much longer than the 52 prediction taps, so the filter cannot overfit
    s = wpe_init(4, 16, 3, math.exp(-CFG.shift_seconds / t_gamma), 1e-3 * np.mean(np.abs(spec[:40]) ** 2),
                 p=p, n_bins=spec.shape[1])
    return wpe_run(spec, s)


def test_anechoic_input_mostly_kept():
    b = single_source(0.001, duration=6.0)
    spec = analyze(b.mixture, CFG)
    z = run_slow_wpe(spec)
    late = slice(int(3.0 / CFG.shift_seconds), None)
    ratio = np.linalg.norm(z[late] - spec[late]) / np.linalg.norm(spec[late])
    assert ratio < 0.3


@pytest.mark.parametrize("p", [0.0, 0.5])
def test_reverberant_srr_improves(p):
    b = single_source(0.5, duration=10.0, seed=1)
    spec = analyze(b.mixture, CFG)
    z = synthesize(run_slow_wpe(spec, p=p), CFG, b.mixture.shape[0])
    a = 5 * CFG.sample_rate
    ref = b.reference_direct[a:, 0]
    assert srr(ref, z[a:, 0], CFG.sample_rate) >= srr(ref, b.mixture[a:, 0], CFG.sample_rate) + 2.0
