"""Command line interface: simulate, enhance, evaluate, sweep."""

import argparse
from concurrent.futures import ProcessPoolExecutor
import logging
import math
from pathlib import Path
import sys
import time

import numpy as np

from .config import RunConfig, dump_config, load_config, write_config_echo
from .io import (
    MIXTURE_WAV,
    SIDECAR,
    IoError,
    load_spec,
    read_bundle,
    read_wav,
    write_bundle,
    write_csv,
    write_wav,
)
from .metrics import MetricReport, evaluate
from .pipeline import TRACE_FIELDS, ChannelMismatch, enhance
from .rtf import Label
from .scenario import PRESETS, SpecInvalid, build_scenario, preset
from .stft import ConfigInvalid

log = logging.getLogger("convbeam")

SWEEP_FIELDS = ("t_gamma", "p", "mode", "delta_fwssnr", "delta_srr", "mean_herm_angle", "runtime")
SWEEP_UNITS = "units: t_gamma s (inf = non-adaptive), delta_fwssnr dB, delta_srr dB, mean_herm_angle rad, runtime s"
TRACE_UNITS = "units: time s, herm_angle rad, max_constraint_err linear; label 0 noise, 1 noise+interferer, 2/3 target"
METRIC_UNITS = "units: dB; interval in s"


# --- scenario sources --------------------------------------------------------

def scenario_from_config(cfg):
    """Build (or load) the scenario bundle named by the configuration."""
    if cfg.scenario:
        path = Path(cfg.scenario)
        if path.is_dir():
            return read_bundle(path)
        spec = load_spec(path)
        spec.seed = cfg.seed
        return build_scenario(spec)
    return build_scenario(preset(cfg.preset, seed=cfg.seed))


def _interval(cfg, bundle):
    start, end = cfg.interval
    return (start, bundle.spec.duration if end is None else end)


def _trace_rows(trace):
    n = len(trace["frame"])
    return [{k: (int(trace[k][i]) if k in ("frame", "label") else float(trace[k][i]))
             for k in TRACE_FIELDS} for i in range(n)]


def mean_target_angle(trace):
    angles = trace["herm_angle"][trace["label"] >= Label.TARGET_1]
    angles = angles[np.isfinite(angles)]
    return float(np.mean(angles)) if angles.size else math.nan


# --- commands ----------------------------------------------------------------

def cmd_simulate(cfg, spec_path=None):
    if spec_path:
        spec = load_spec(spec_path)
        spec.seed = cfg.seed
    else:
        spec = preset(cfg.preset, seed=cfg.seed)
    bundle = build_scenario(spec)
    out = write_bundle(bundle, cfg.out)
    write_config_echo(cfg, out)
    log.info("wrote %s (%.1f s, %d mics)", out, spec.duration, spec.n_mics)
    return out


def _labels_for(mixture_path, labels_path=None):
    side = Path(labels_path) if labels_path else Path(mixture_path).parent / SIDECAR
    if side.is_dir():
        side = side / SIDECAR
    if not side.is_file():
        raise IoError(f"no label sidecar found at {side}; pass --bundle with a directory "
                      "written by 'convbeam simulate'")
    return read_bundle(side.parent)


def run_enhance(cfg, bundle, mixture=None):
    mixture = bundle.mixture if mixture is None else mixture
    return enhance(mixture, bundle.oracle_labels, cfg.enhance, bundle.oracle_rtf_for_label())


def cmd_enhance(cfg, mixture_path, bundle_path=None):
    mixture, fs = read_wav(mixture_path)
    bundle = _labels_for(mixture_path, bundle_path)
    if fs != cfg.enhance.stft.sample_rate:
        raise ConfigInvalid(f"mixture sample rate {fs} != configured {cfg.enhance.stft.sample_rate}")
    result = run_enhance(cfg, bundle, mixture)
    out = Path(cfg.out)
    write_wav(out / "enhanced.wav", result.enhanced, fs)
    write_csv(out / "trace.csv", TRACE_FIELDS, _trace_rows(result.trace), comments=[TRACE_UNITS])
    write_config_echo(cfg, out)
    log.info("enhanced %s in %.1f s -> %s", mixture_path, result.runtime, out)
    return result


def cmd_evaluate(cfg, bundle_path, enhanced_path):
    bundle = read_bundle(bundle_path)
    enhanced, fs = read_wav(enhanced_path)
    if fs != bundle.spec.sample_rate:
        raise IoError(f"{enhanced_path}: sample rate {fs} != bundle rate {bundle.spec.sample_rate}")
    report = evaluate(bundle.reference_direct, bundle.mixture, enhanced, bundle.spec.ref_mics, fs,
                      interval=_interval(cfg, bundle))
    out = Path(cfg.out)
    write_csv(out / "metrics.csv", MetricReport.CSV_FIELDS, [report.row()], comments=[METRIC_UNITS])
    write_config_echo(cfg, out)
    return report


def _cell_name(mode, p, t_gamma):
    tg = "inf" if math.isinf(t_gamma) else f"{t_gamma * 1000:g}ms"
    return f"{mode}_p{p:g}_tg{tg}"


def _sweep_cell(args):
    cfg, bundle, mode, p, t_gamma = args
    t_ms = None if math.isinf(t_gamma) else t_gamma * 1000.0
    cell = cfg.with_overrides(mode=mode, p=p, t_gamma_ms=t_ms)
    out = Path(cfg.out) / "cells" / _cell_name(mode, p, t_gamma)
    start = time.perf_counter()
    result = run_enhance(cell, bundle)
    report = evaluate(bundle.reference_direct, bundle.mixture, result.enhanced, bundle.spec.ref_mics,
                      bundle.spec.sample_rate, interval=_interval(cfg, bundle))
    runtime = time.perf_counter() - start
    write_csv(out / "trace.csv", TRACE_FIELDS, _trace_rows(result.trace), comments=[TRACE_UNITS])
    write_csv(out / "metrics.csv", MetricReport.CSV_FIELDS, [report.row()], comments=[METRIC_UNITS])
    write_config_echo(cell.with_overrides(out=str(out)), out)
    return {
        "t_gamma": t_gamma,
        "p": p,
        "mode": mode,
        "delta_fwssnr": report.delta_fwssnr,
        "delta_srr": report.delta_srr,
        "mean_herm_angle": mean_target_angle(result.trace),
        "runtime": runtime,
    }


def sweep_cells(cfg):
    """``(mode, p, t_gamma)`` triples: the adaptive grid plus one non-adaptive run per p."""
    cfg.validate_sweep()
    cells = []
    for p in sorted(set(cfg.sweep_p)):
        cells += [("adaptive", p, t) for t in sorted(set(cfg.sweep_t_gamma))]
        cells.append(("non-adaptive", p, math.inf))
    return cells


def cmd_sweep(cfg, jobs=1, timing=True, bundle=None):
    """Run every sweep cell; returns ``(rows, failures)`` and writes ``sweep.csv``."""
    cells = sweep_cells(cfg)
    bundle = scenario_from_config(cfg) if bundle is None else bundle
    work = [(cfg, bundle, mode, p, t) for mode, p, t in cells]
    rows, failures = [], []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_sweep_cell, w) for w in work]
            outcomes = []
            for w, fut in zip(work, futures):
                try:
                    outcomes.append((w, fut.result(), None))
                except Exception as exc:  # noqa: BLE001 - reported per cell
                    outcomes.append((w, None, exc))
    else:
        outcomes = []
        for w in work:
            try:
                outcomes.append((w, _sweep_cell(w), None))
            except Exception as exc:  # noqa: BLE001 - reported per cell
                outcomes.append((w, None, exc))
    for w, row, exc in outcomes:
        name = _cell_name(*w[2:])
        if exc is not None:
            log.error("cell %s failed: %s: %s", name, type(exc).__name__, exc)
            failures.append(f"{name}: {type(exc).__name__}: {exc}")
            continue
        log.info("%s: dFWSSNR %.2f dB, dSRR %.2f dB, angle %.3f rad, %.1f s", name,
                 row["delta_fwssnr"], row["delta_srr"], row["mean_herm_angle"], row["runtime"])
        rows.append(row)
    rows.sort(key=lambda r: (r["p"], r["t_gamma"], r["mode"]))
    out = Path(cfg.out)
    written = [dict(r, runtime=r["runtime"] if timing else "") for r in rows]
    write_csv(out / "sweep.csv", SWEEP_FIELDS, written, comments=[SWEEP_UNITS])
    (out / "failures.txt").write_text("".join(f + "\n" for f in failures))
    write_config_echo(cfg, out)
    return rows, failures


# --- argument parsing ----------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="convbeam", description="Adaptive convolutional beamforming")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)

    def algo(p):
        p.add_argument("--mode", choices=["adaptive", "non-adaptive"])
        p.add_argument("--p", type=float, help="shape parameter in [0, 2]")
        p.add_argument("--t-gamma-ms", type=float, help="time constant of the exponential window")

    s = sub.add_parser("simulate", help="generate a scenario bundle")
    common(s)
    s.add_argument("spec", nargs="?", help="JSON scenario spec (default: --preset)")
    s.add_argument("--preset", choices=sorted(PRESETS))

    e = sub.add_parser("enhance", help="enhance a mixture WAV")
    common(e)
    algo(e)
    e.add_argument("mixture", help="multichannel mixture WAV")
    e.add_argument("--bundle", help="bundle directory with labels (default: the mixture's directory)")

    v = sub.add_parser("evaluate", help="score an enhanced WAV against a bundle")
    common(v)
    v.add_argument("bundle", help="bundle directory written by 'simulate'")
    v.add_argument("enhanced", help="stereo enhanced WAV")

    w = sub.add_parser("sweep", help="time-constant / shape-parameter sweep")
    common(w)
    w.add_argument("--preset", choices=sorted(PRESETS))
    w.add_argument("--jobs", type=int, default=1, help="sweep cells run in parallel")
    w.add_argument("--no-timing", action="store_true",
                   help="leave the runtime column empty so reruns are byte-identical")

    c = sub.add_parser("config", help="print the fully resolved configuration")
    common(c)
    algo(c)
    return parser


def _resolve(args):
    cfg = load_config(args.config)
    return cfg.with_overrides(
        mode=getattr(args, "mode", None),
        p=getattr(args, "p", None),
        t_gamma_ms=getattr(args, "t_gamma_ms", None),
        seed=args.seed,
        out=args.out,
        preset=getattr(args, "preset", None),
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2) if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "simulate":
            out = cmd_simulate(cfg, args.spec)
            print(out / MIXTURE_WAV)
        elif args.command == "enhance":
            cmd_enhance(cfg, args.mixture, args.bundle)
            print(Path(cfg.out) / "enhanced.wav")
        elif args.command == "evaluate":
            r = cmd_evaluate(cfg, args.bundle, args.enhanced)
            print(f"FWSSNR {r.fwssnr_in:.2f} -> {r.fwssnr_out:.2f} dB (delta {r.delta_fwssnr:+.2f}), "
                  f"SRR {r.srr_in:.2f} -> {r.srr_out:.2f} dB (delta {r.delta_srr:+.2f})")
        elif args.command == "sweep":
            rows, failures = cmd_sweep(cfg, jobs=args.jobs, timing=not args.no_timing)
            print(Path(cfg.out) / "sweep.csv")
            if failures:
                print(f"{len(failures)} sweep cell(s) failed, see failures.txt", file=sys.stderr)
                return 1
        elif args.command == "config":
            sys.stdout.write(dump_config(cfg))
    except (ConfigInvalid, SpecInvalid, IoError, ChannelMismatch) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
