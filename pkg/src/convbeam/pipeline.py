"""End-to-end enhancement: MIMO-WPE -> RTF tracking -> wBLCMP beamforming."""

from dataclasses import dataclass, field, replace
import logging
import math
import time

import numpy as np

from .beamformer import (
    BeamformerConfig,
    batch_solve,
    beamformer_init,
    initial_regularization,
    online_step,
)
from .rtf import Label, RtfTracker, hermitian_angle
from .stft import ConfigInvalid, StftConfig, analyze, synthesize
from .wpe import wpe_init, wpe_step

log = logging.getLogger(__name__)

MODES = ("adaptive", "non-adaptive")


class ChannelMismatch(ValueError):
    pass


@dataclass
class WpeConfig:
    filter_len: int = 16
    delay: int = 3
    gamma: float | None = None  # None: follow the beamformer
    p: float | None = None  # None: follow the beamformer


@dataclass
class RtfConfig:
    gamma_cov: float | None = None  # None: follow the beamformer
    eps: float = 1e-6


@dataclass
class EnhanceConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    beamformer: BeamformerConfig = field(default_factory=BeamformerConfig)
    wpe: WpeConfig = field(default_factory=WpeConfig)
    rtf: RtfConfig = field(default_factory=RtfConfig)
    mode: str = "adaptive"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigInvalid(f"mode must be one of {MODES}")
        if not math.isclose(self.beamformer.frame_shift_s, self.stft.shift_seconds, rel_tol=1e-12):
            self.beamformer = replace(self.beamformer, frame_shift_s=self.stft.shift_seconds)

    def resolved(self):
        """Copy with the mode applied and inherited defaults filled in."""
        bf = self.beamformer
        if self.mode == "non-adaptive":
            bf = replace(bf, t_gamma=math.inf)
        wpe = replace(
            self.wpe,
            gamma=bf.gamma if self.wpe.gamma is None or self.mode == "non-adaptive" else self.wpe.gamma,
            p=bf.p if self.wpe.p is None else self.wpe.p,
        )
        rtf = replace(
            self.rtf,
            gamma_cov=bf.gamma if self.rtf.gamma_cov is None or self.mode == "non-adaptive" else self.rtf.gamma_cov,
        )
        return EnhanceConfig(stft=self.stft, beamformer=bf, wpe=wpe, rtf=rtf, mode=self.mode)


TRACE_FIELDS = (
    "frame", "time", "label", "herm_angle", "mean_log10_weight",
    "max_constraint_err", "n_constraints", "n_held_bins",
)


@dataclass
class EnhanceResult:
    enhanced: np.ndarray  # (n_samples, 2) left/right
    outputs: np.ndarray  # (n_frames, n_bins, 2) STFT-domain outputs
    trace: dict  # TRACE_FIELDS -> per-frame arrays
    rtf_target: np.ndarray | None  # final (non-adaptive: the single) estimate
    rtf_interferer: np.ndarray | None
    config: EnhanceConfig
    runtime: float = 0.0
    objective: list = field(default_factory=list)


def _angle_bins(n_bins):
    return slice(1, n_bins - 1)


def mean_angle(est, oracle):
    sl = _angle_bins(est.shape[0])
    return float(np.mean(hermitian_angle(est[sl], oracle[sl])))


def enhance(mixture, labels, cfg, oracle_rtfs=None):
    """Enhance a multichannel mixture ``(n_samples, n_mics)``.

    ``labels`` are the oracle per-frame period labels; ``oracle_rtfs`` maps
    target labels to reference RTFs and is used only for the angle trace.
    """
    mixture = np.asarray(mixture, dtype=float)
    run = cfg.resolved()
    bf = run.beamformer
    if mixture.ndim != 2 or mixture.shape[1] != bf.n_mics:
        raise ChannelMismatch(f"mixture has {mixture.shape[-1] if mixture.ndim == 2 else 1} channels, "
                              f"config expects {bf.n_mics}")
    start = time.perf_counter()
    spec = analyze(mixture, run.stft)
    n_frames, n_bins, _ = spec.shape
    labels = np.asarray(labels)
    if labels.shape[0] != n_frames:
        raise ConfigInvalid(f"{labels.shape[0]} labels for {n_frames} frames")
    oracle_rtfs = oracle_rtfs or {}

    head = spec[:bf.init_reg_frames]
    wpe_reg = initial_regularization(head, run.wpe.p, bf.init_reg_rel, bf.init_reg_fallback)
    bf_reg = initial_regularization(head, bf.p, bf.init_reg_rel, bf.init_reg_fallback)
    wstate = wpe_init(bf.n_mics, run.wpe.filter_len, run.wpe.delay, run.wpe.gamma, wpe_reg,
                      p=run.wpe.p, n_bins=n_bins)
    tracker = RtfTracker(n_bins, bf.n_mics, run.rtf.gamma_cov, run.rtf.eps)
    trace = {name: np.full(n_frames, np.nan) for name in TRACE_FIELDS}
    trace["frame"] = np.arange(n_frames, dtype=float)
    trace["time"] = np.arange(n_frames) * run.stft.shift_seconds
    trace["label"] = labels.astype(float)

    adaptive = run.mode == "adaptive"
    outputs = np.zeros((n_frames, n_bins, 2), complex)
    bstate = beamformer_init(bf, n_bins, bf_reg) if adaptive else None
    for t in range(n_frames):
        z = wpe_step(wstate, spec[t])
        tracker.update(z, labels[t])
        if not adaptive:
            continue
        d_l, d_r = online_step(bstate, spec[t], tracker.rtf_target, tracker.rtf_interferer, bf)
        outputs[t, :, 0] = d_l
        outputs[t, :, 1] = d_r
        ok = ~bstate.held
        trace["mean_log10_weight"][t] = np.mean(np.log10(bstate.last_weight))
        trace["max_constraint_err"][t] = np.max(bstate.constraint_err[ok]) if np.any(ok) else np.nan
        trace["n_constraints"][t] = bstate.n_constraints
        trace["n_held_bins"][t] = np.count_nonzero(bstate.held)
        oracle = oracle_rtfs.get(int(labels[t]))
        if oracle is not None and tracker.rtf_target is not None:
            trace["herm_angle"][t] = mean_angle(tracker.rtf_target, oracle)

    objective = []
    if not adaptive:
        res = batch_solve(spec, tracker.rtf_target, tracker.rtf_interferer, bf, bf_reg)
        outputs[..., 0] = res.d_left
        outputs[..., 1] = res.d_right
        objective = res.objective
        n_con = 1 + (tracker.rtf_interferer is not None and len(bf.betas_db) > 1)
        trace["max_constraint_err"][:] = np.max(res.constraint_err)
        trace["n_constraints"][:] = n_con
        trace["n_held_bins"][:] = 0
        if tracker.rtf_target is not None:
            for label, oracle in oracle_rtfs.items():
                sel = labels == label
                trace["herm_angle"][sel] = mean_angle(tracker.rtf_target, oracle)

    enhanced = synthesize(outputs, run.stft, mixture.shape[0])
    runtime = time.perf_counter() - start
    log.info("enhance (%s, p=%g, t_gamma=%g s): %d frames in %.1f s",
             run.mode, bf.p, bf.t_gamma, n_frames, runtime)
    return EnhanceResult(
        enhanced=enhanced,
        outputs=outputs,
        trace=trace,
        rtf_target=tracker.rtf_target,
        rtf_interferer=tracker.rtf_interferer,
        config=run,
        runtime=runtime,
        objective=objective,
    )


def target_labels():
    return (Label.TARGET_1, Label.TARGET_2)
