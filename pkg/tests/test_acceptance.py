"""Acceptance criteria, one test per criterion; results are summarized at the end of the run."""

import math
import os
import time

import numpy as np
import pytest

from conftest import record
from convbeam.beamformer import (
    BeamformerConfig,
    batch_solve,
    beamformer_init,
    estimate_weight,
    initial_regularization,
    online_step,
)
from convbeam.cli import cmd_sweep
from convbeam.config import SWEEP_P, SWEEP_T_GAMMA_MS, RunConfig
from convbeam.io import read_csv
from convbeam.linalg import SYMMETRIZE_EVERY, rank_one_inverse_update
from convbeam.pipeline import EnhanceConfig, enhance
from convbeam.rtf import Label, estimate_rtf, hermitian_angle
from convbeam.scenario import (
    ScenarioSpec,
    SourceSpec,
    azimuth_position,
    binaural_mic_positions,
    build_scenario,
    paper_switching_target,
)
from convbeam.stft import StftConfig, analyze, synthesize, window

CFG = StftConfig()
SWITCH_TIME = 20.4
TREND_NOISE_DB = 0.3


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture(scope="session")
def preset_sweep(tmp_path_factory):
    """The full time-constant / shape-parameter sweep on the switching-target preset."""
    out = tmp_path_factory.mktemp("sweep_a")
    cfg = RunConfig(out=str(out))
    start = time.perf_counter()
    rows, failures = cmd_sweep(cfg, jobs=os.cpu_count() or 1, timing=False)
    return {"rows": rows, "failures": failures, "out": out, "runtime": time.perf_counter() - start}


def cell_trace(sweep, name):
    rows = read_csv(sweep["out"] / "cells" / name / "trace.csv")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def test_1_woodbury_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    dim, gamma, n, delta = 56, 0.96, 500, 0.5
    ainv = np.eye(dim, dtype=complex) / delta
    direct = delta * np.eye(dim, dtype=complex)
    for t in range(n):
        x = crandn(rng, dim)
        d = crandn(rng, 2)
        w = estimate_weight(d[0], d[1], 0.5, 1e-2)
        ainv = rank_one_inverse_update(ainv, x, w, gamma, symmetrize=(t + 1) % SYMMETRIZE_EVERY == 0)
        direct = gamma * direct + w * np.outer(x, x.conj())
    expect = np.linalg.inv(direct)
    err = np.linalg.norm(ainv - expect) / np.linalg.norm(expect)
    runtime = time.perf_counter() - start
    ok = err <= 1e-6 and runtime < 10
    record(1, "Woodbury equivalence", ok, f"rel Frobenius {err:.2e} (<= 1e-6), {runtime:.2f} s (< 10 s)")
    assert ok


@pytest.mark.slow
def test_2_constraint_satisfaction(preset_sweep):
    trace = cell_trace(preset_sweep, "adaptive_p0.5_tg400ms")
    active = trace["label"] >= Label.TARGET_1
    worst = float(np.nanmax(trace["max_constraint_err"][active]))
    held = int(np.sum(trace["n_held_bins"][active]))
    row = next(r for r in preset_sweep["rows"]
               if r["mode"] == "adaptive" and r["p"] == 0.5 and r["t_gamma"] == 0.4)
    ok = worst <= 1e-8 and held == 0 and row["runtime"] < 600
    record(2, "constraint satisfaction", ok,
           f"max |h^H c - beta| {worst:.2e} (<= 1e-8), held bins {held}, enhance+evaluate {row['runtime']:.0f} s")
    assert ok


def test_3_batch_online_equivalence():
    bundle = build_scenario(paper_switching_target(duration=5.0, switch_time=3.5))
    spec = analyze(bundle.mixture, CFG)
    cfg = BeamformerConfig(p=2.0, t_gamma=math.inf)
    reg = initial_regularization(spec[:cfg.init_reg_frames], cfg.p)
    target = bundle.oracle_rtfs["target1"]
    interferer = bundle.interferer_rtf()
    state = beamformer_init(cfg, spec.shape[1], reg)
    for y in spec:
        online_step(state, y, target, interferer, cfg)
    res = batch_solve(spec, target, interferer, cfg, reg, n_iters=1)
    err = np.linalg.norm(state.h - res.h, axis=(1, 2)) / np.linalg.norm(res.h, axis=(1, 2))
    ok = float(err.max()) <= 1e-6
    record(3, "batch/online equivalence", ok, f"max per-bin rel error {err.max():.2e} (<= 1e-6)")
    assert ok


def mpdr_oracle(spec, a, gamma, reg):
    n_frames, n_bins, m = spec.shape
    out = np.zeros((n_frames, n_bins), complex)
    for k in range(n_bins):
        r = reg * np.eye(m, dtype=complex)
        for t in range(n_frames):
            r = gamma * r + np.outer(spec[t, k], spec[t, k].conj())
            x = np.linalg.solve(r, a[k])
            out[t, k] = (x / (a[k].conj() @ x)).conj() @ spec[t, k]
    return out


def test_4_mpdr_reduction():
    rng = np.random.default_rng(104)
    n_bins = 8
    a = crandn(rng, n_bins, 4)
    a /= a[:, :1]
    spec = crandn(rng, 200, n_bins, 4)
    cfg = BeamformerConfig(filter_len=3, delay=3, p=2.0, t_gamma=0.3, betas_db=(0.0,), ref_mics=(0, 0))
    state = beamformer_init(cfg, n_bins, 0.2)
    out = np.array([online_step(state, y, a, None, cfg)[0] for y in spec])
    expect = mpdr_oracle(spec, a, cfg.gamma, 0.2)
    err = np.linalg.norm(out - expect, axis=0) / np.linalg.norm(expect, axis=0)
    ok = float(err.max()) <= 1e-9
    record(4, "MPDR reduction", ok, f"max per-bin rel error {err.max():.2e} (<= 1e-9)")
    assert ok


def test_5_stft_reconstruction():
    rng = np.random.default_rng(105)
    x = rng.standard_normal((3 * CFG.sample_rate, 4))
    y = synthesize(analyze(x, CFG), CFG, x.shape[0])
    inner = slice(CFG.frame_len, x.shape[0] - CFG.frame_len)
    err_db = 10 * np.log10(np.sum((y[inner] - x[inner]) ** 2) / np.sum(x[inner] ** 2))

    s = x[:8000, 0]
    spec = analyze(s, CFG)[:, :, 0]
    c = np.full(spec.shape[1], 2.0)
    c[[0, -1]] = 1.0
    spec_energy = np.sum(c * np.abs(spec) ** 2) / CFG.frame_len
    padded = np.concatenate([np.zeros(CFG.lead), s, np.zeros(CFG.frame_len)])
    win = window(CFG)
    hop = CFG.frame_shift
    time_energy = sum(np.sum((win * padded[t * hop:t * hop + CFG.frame_len]) ** 2) for t in range(spec.shape[0]))
    parseval = abs(spec_energy - time_energy) / time_energy
    ok = err_db <= -80 and parseval <= 1e-6
    record(5, "STFT reconstruction", ok, f"interior error {err_db:.1f} dB (<= -80), Parseval {parseval:.1e} (<= 1e-6)")
    assert ok


def anechoic_single_source():
    spec = ScenarioSpec(
        mic_positions=binaural_mic_positions(),
        sources=[SourceSpec("target1", "target", azimuth_position(30.0), (1.0, 6.0))],
        t60=0.001,
        duration=6.0,
        snr_db=20.0,
        sir_db=math.inf,
        noise_only=(0.0, 0.5),
        noise_plus_interferer=(0.5, 1.0),
        seed=106,
    )
    return build_scenario(spec)


def test_6_rtf_recovery():
    rng = np.random.default_rng(106)
    worst = 0.0
    for _ in range(50):
        a = crandn(rng, 4)
        g = crandn(rng, 4, 4)
        r_v = g @ g.conj().T + 0.1 * np.eye(4)
        v = estimate_rtf(rng.uniform(0.5, 5) * np.outer(a, a.conj()) + r_v, r_v, 0, eps=0.0)
        worst = max(worst, float(hermitian_angle(v, a)))

    b = anechoic_single_source()
    res = enhance(b.mixture, b.oracle_labels, EnhanceConfig(), b.oracle_rtf_for_label())
    times = res.trace["time"]
    onset = b.spec.targets[0].activity[0]
    late = (times >= onset + 2.0) & (res.trace["label"] == Label.TARGET_1)
    tracked = float(np.mean(res.trace["herm_angle"][late]))
    ok = worst < 1e-5 and tracked < 0.1
    record(6, "RTF recovery", ok,
           f"covariance whitening {worst:.1e} rad (< 1e-5), anechoic tracking after 2 s {tracked:.3f} rad (< 0.1)")
    assert ok


def unimodal(values, tol):
    peak = int(np.argmax(values))
    rising = all(values[i + 1] >= values[i] - tol for i in range(peak))
    falling = all(values[i + 1] <= values[i] + tol for i in range(peak, len(values) - 1))
    return rising and falling, peak


@pytest.mark.slow
def test_7_trend_reproduction(preset_sweep):
    rows = preset_sweep["rows"]
    grid = [t / 1000.0 for t in SWEEP_T_GAMMA_MS]
    problems, notes = [], []
    assert not preset_sweep["failures"], preset_sweep["failures"]
    for p in SWEEP_P:
        base = next(r for r in rows if r["mode"] == "non-adaptive" and r["p"] == p)
        adaptive = {r["t_gamma"]: r for r in rows if r["mode"] == "adaptive" and r["p"] == p}
        df = np.array([adaptive[t]["delta_fwssnr"] for t in grid])
        ds = np.array([adaptive[t]["delta_srr"] for t in grid])
        short_f = [t for t, v in zip(grid, df) if v < base["delta_fwssnr"] + 1.0]
        short_s = [t for t, v in zip(grid, ds) if 0.2 <= t <= 1.0 and not v > base["delta_srr"]]
        shape_ok, peak = unimodal(ds, TREND_NOISE_DB)
        if short_f:
            problems.append(f"p={p:g}: dFWSSNR gain < 1 dB at t_gamma {short_f}")
        if short_s:
            problems.append(f"p={p:g}: dSRR not above non-adaptive at t_gamma {short_s}")
        if not shape_ok:
            problems.append(f"p={p:g}: dSRR not unimodal")
        if not 0.2 <= grid[peak] <= 0.75:
            problems.append(f"p={p:g}: dSRR peak at {grid[peak]:g} s")
        notes.append(f"p={p:g} non-adaptive dF {base['delta_fwssnr']:.2f} dS {base['delta_srr']:.2f}; "
                     f"adaptive dF {np.round(df, 2).tolist()} dS {np.round(ds, 2).tolist()}")
    runtime = preset_sweep["runtime"]
    if runtime >= 7200:
        problems.append(f"sweep took {runtime:.0f} s")
    for n in notes:
        print(n)
    ok = not problems
    record(7, "trend reproduction", ok,
           ("all trends reproduced" if ok else "; ".join(problems)) + f" (sweep {runtime / 60:.0f} min)")
    assert ok, "\n".join(problems + notes)


@pytest.mark.slow
def test_8_tracking_after_switch(preset_sweep):
    ad = cell_trace(preset_sweep, "adaptive_p0.5_tg400ms")
    na = cell_trace(preset_sweep, "non-adaptive_p0.5_tginf")
    after = (ad["time"] >= SWITCH_TIME) & (ad["label"] == Label.TARGET_2)
    t = ad["time"][after]
    better = ad["herm_angle"][after] < na["herm_angle"][after]
    early = np.nonzero(better & (t <= SWITCH_TIME + 2.0))[0]
    if early.size:
        first = early[0]
        share = float(np.mean(better[first:]))
        drop = f"below after {t[first] - SWITCH_TIME:.2f} s"
    else:
        share, drop = 0.0, "never below within 2 s"
    ok = early.size > 0 and share >= 0.8
    record(8, "tracking after switch", ok, f"{drop}, lower in {100 * share:.1f}% of later frames (>= 80%)")
    assert ok


@pytest.mark.slow
def test_9_irls_objective():
    b = build_scenario(paper_switching_target())
    cfg = EnhanceConfig(mode="non-adaptive", beamformer=BeamformerConfig(p=0.5, n_irls_iters=3))
    obj = enhance(b.mixture, b.oracle_labels, cfg, b.oracle_rtf_for_label()).objective
    steps = [obj[i + 1] / obj[i] - 1 for i in range(len(obj) - 1)]
    ok = len(obj) == 3 and all(s <= 1e-3 for s in steps)
    record(9, "IRLS objective decrease", ok,
           f"objective {[f'{o:.6g}' for o in obj]}, relative steps {[f'{s:+.2e}' for s in steps]} (<= +0.1%)")
    assert ok


@pytest.mark.slow
def test_10_determinism(preset_sweep, tmp_path):
    cfg = RunConfig(out=str(tmp_path))
    cmd_sweep(cfg, jobs=os.cpu_count() or 1, timing=False)
    first = (preset_sweep["out"] / "sweep.csv").read_bytes()
    second = (tmp_path / "sweep.csv").read_bytes()
    ok = first == second
    record(10, "determinism", ok, f"sweep.csv {'identical' if ok else 'differs'} across two runs ({len(first)} bytes)")
    assert ok
