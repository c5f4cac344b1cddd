"""Sparse weighted convolutional LCMP beamformer (wBLCMP), online and batch.

The filter operates on stacked observations ``[y_t; y_{t-delay}; ...;
y_{t-filter_len+1}]`` so a single linear filter performs late-reverberation
prediction and spatial LCMP filtering jointly. ``lp``-norm minimization of the
output is linearized by iteratively reweighted least squares; the online
variant uses one reweighting step per frame and an exponentially windowed,
weighted covariance whose inverse is updated recursively.

All state arrays carry a leading frequency-bin axis; bins are independent.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .linalg import SYMMETRIZE_EVERY, LinalgError, herm, hermitize, hpd_solve, rank_one_inverse_update
from .stft import ConfigInvalid

GRAM_COND_MAX = 1e12


class SingularConstraintGram(LinalgError):
    pass


def gamma_from_time_constant(t_gamma, frame_shift_s):
    """Forgetting factor ``exp(-t_s / t_gamma)``; ``t_gamma = inf`` gives 1."""
    if t_gamma is None or math.isinf(t_gamma):
        return 1.0
    if not t_gamma > 0:
        raise ConfigInvalid("time constant must be positive")
    return math.exp(-frame_shift_s / t_gamma)


def db_to_amplitude(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 20.0)


@dataclass
class BeamformerConfig:
    n_mics: int = 4
    filter_len: int = 16
    delay: int = 3
    p: float = 0.5
    t_gamma: float = 0.4  # seconds; inf for the non-adaptive (gamma = 1) case
    frame_shift_s: float = 0.016
    betas_db: tuple = (0.0, -20.0)
    ref_mics: tuple = (0, 2)
    init_reg_rel: float = 1e-3
    init_reg_frames: int = 10
    init_reg_fallback: float = 1e-6
    weight_floor_rel: float = 1e-10
    n_irls_iters: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_mics < 2:
            raise ConfigInvalid("need at least two microphones")
        if not self.filter_len >= self.delay >= 1:
            raise ConfigInvalid("need filter_len >= delay >= 1")
        if not 0 <= self.p <= 2:
            raise ConfigInvalid("shape parameter p must lie in [0, 2]")
        if len(self.ref_mics) != 2 or not all(0 <= r < self.n_mics for r in self.ref_mics):
            raise ConfigInvalid(f"invalid reference microphones {self.ref_mics}")
        if not 1 <= len(self.betas_db) < self.n_mics:
            raise ConfigInvalid("need 1 <= number of constraints < n_mics")
        if self.n_irls_iters < 1:
            raise ConfigInvalid("n_irls_iters must be >= 1")
        gamma_from_time_constant(self.t_gamma, self.frame_shift_s)

    @property
    def gamma(self):
        return gamma_from_time_constant(self.t_gamma, self.frame_shift_s)

    @property
    def betas(self):
        return db_to_amplitude(self.betas_db)

    @property
    def stack_dim(self):
        return self.n_mics * (self.filter_len - self.delay + 1)


def stack(frame_ring, y, filter_len, delay):
    """Stacked observation: current frame then frames ``t-delay ... t-filter_len+1``.

    ``frame_ring[..., 0, :]`` is frame ``t-1``; shapes ``(..., filter_len-1, M)``
    and ``(..., M)``.
    """
    past = frame_ring[..., delay - 1:filter_len - 1, :]
    past = past.reshape(past.shape[:-2] + (-1,))
    return np.concatenate([y, past], axis=-1)


def estimate_weight(d_left, d_right, p, floor):
    """IRLS weight ``max(|d_L|^2 + |d_R|^2, floor) ** (p/2 - 1)``."""
    power = np.abs(d_left) ** 2 + np.abs(d_right) ** 2
    return np.maximum(power, floor) ** (p / 2.0 - 1.0)


def constraint_matrix(rtfs, ref, stack_dim):
    """Zero-padded constraint columns from RTFs normalized at microphone ``ref``.

    ``rtfs``: ``(..., J, M)`` direction vectors; returns ``(..., stack_dim, J)``.
    """
    rtfs = np.asarray(rtfs)
    norm = rtfs / rtfs[..., ref:ref + 1]
    norm[..., ref] = 1.0
    m = rtfs.shape[-1]
    c = np.zeros(rtfs.shape[:-2] + (stack_dim, rtfs.shape[-2]), complex)
    c[..., :m, :] = np.swapaxes(norm, -1, -2)
    return c


def _lcmp_from_rc(rc, c, betas, ref):
    """``h = (R^-1 C) G^-1 b`` with ``G = C^H R^-1 C`` and ``b = B C^H e_ref``."""
    gram = hermitize(herm(c) @ rc)
    b = betas * np.conj(c[..., ref, :])
    return np.einsum("...dj,...j->...d", rc, hpd_solve(gram, b)), gram


def gram_condition(gram):
    vals = np.linalg.eigvalsh(gram)
    return np.where(vals[..., 0] > 0, vals[..., -1] / np.maximum(vals[..., 0], 1e-300), np.inf)


def solve_filter(rinv, c, betas, ref):
    """Constrained weighted-LS filter ``R^-1 C (C^H R^-1 C)^-1 B C^H e_ref``.

    ``betas`` is the diagonal of B. Raises SingularConstraintGram if the
    constraint Gram matrix is numerically singular.
    """
    rc = rinv @ c
    gram = hermitize(herm(c) @ rc)
    if np.any(gram_condition(gram) > GRAM_COND_MAX):
        raise SingularConstraintGram("constraint Gram matrix is numerically singular")
    h, _ = _lcmp_from_rc(rc, c, np.asarray(betas, dtype=float), ref)
    return h


def constraint_error(h, c, betas):
    """``max_j |h^H c_j - beta_j|`` over the last axis of the constraints."""
    resp = np.einsum("...d,...dj->...j", np.conj(h), c)
    return np.max(np.abs(resp - betas), axis=-1)


def initial_regularization(frames, p, rel=1e-3, fallback=1e-6):
    """Per-bin loading ``delta`` for ``R^-1 = I / delta`` from a few leading frames.

    ``frames``: ``(n_frames, n_bins, n_mics)``. The mean input power ``P`` is
    converted to the units of the weighted covariance by the IRLS weight a
    passthrough output of that power would receive, ``(2 P)^(p/2 - 1)``.
    """
    power = np.mean(np.abs(frames) ** 2, axis=(0, 2))
    delta = rel * power * np.where(power > 0, 2 * power, 1.0) ** (p / 2 - 1)
    return np.where(power > 0, delta, fallback)


@dataclass
class BeamformerState:
    rinv: np.ndarray  # (K, D, D)
    h: np.ndarray  # (K, 2, D), filters for the left/right references
    frame_ring: np.ndarray  # (K, filter_len - 1, M)
    power_sum: np.ndarray  # (K,)
    n_frames: int = 0
    constraint_err: np.ndarray = None  # (K, 2) after the latest solve
    held: np.ndarray = None  # (K,) bins that kept previous filters this frame
    last_weight: np.ndarray = None
    n_constraints: int = 0
    history: dict = field(default_factory=dict)


def beamformer_init(cfg, n_bins, init_reg):
    dim = cfg.stack_dim
    init_reg = np.broadcast_to(np.asarray(init_reg, dtype=float), (n_bins,))
    h = np.zeros((n_bins, 2, dim), complex)
    for nu, ref in enumerate(cfg.ref_mics):
        h[:, nu, ref] = 1.0
    return BeamformerState(
        rinv=np.eye(dim, dtype=complex)[None] / init_reg[:, None, None],
        h=h,
        frame_ring=np.zeros((n_bins, cfg.filter_len - 1, cfg.n_mics), complex),
        power_sum=np.zeros(n_bins),
        constraint_err=np.zeros((n_bins, 2)),
        held=np.zeros(n_bins, bool),
    )


def _constraint_rtfs(cfg, n_bins, rtf_target, rtf_interferer, ref):
    if rtf_target is None:
        target = np.zeros((n_bins, cfg.n_mics), complex)
        target[:, ref] = 1.0
    else:
        target = np.asarray(rtf_target)
    cols = [target]
    if rtf_interferer is not None and len(cfg.betas_db) > 1:
        cols.append(np.asarray(rtf_interferer))
    return np.stack(cols, axis=1)  # (K, J, M)


def online_step(state, y, rtf_target, rtf_interferer, cfg, weight=None):
    """Advance all bins by one frame and return ``(d_left, d_right)``.

    ``rtf_target``/``rtf_interferer`` are ``(n_bins, n_mics)`` direction vectors
    or ``None`` (target falls back to the reference-aligned unit vector, the
    interferer constraint is omitted). ``weight`` overrides the IRLS weight.
    Bins whose constraint Gram matrix is singular keep their previous filters
    and are flagged in ``state.held``.
    """
    y = np.asarray(y, dtype=complex)
    n_bins = y.shape[0]
    ybar = stack(state.frame_ring, y, cfg.filter_len, cfg.delay)

    state.n_frames += 1
    state.power_sum += np.sum(np.abs(ybar) ** 2, axis=1) / ybar.shape[1]
    if weight is None:
        d_prov = np.einsum("kvd,kd->kv", np.conj(state.h), ybar)
        floor = np.maximum(cfg.weight_floor_rel * state.power_sum / state.n_frames, 1e-300)
        weight = estimate_weight(d_prov[:, 0], d_prov[:, 1], cfg.p, floor)
    weight = np.broadcast_to(np.asarray(weight, dtype=float), (n_bins,))
    state.last_weight = weight
    state.rinv = rank_one_inverse_update(state.rinv, ybar, weight, cfg.gamma,
                                         symmetrize=state.n_frames % SYMMETRIZE_EVERY == 0)

    betas_all = cfg.betas
    held = np.zeros(n_bins, bool)
    for nu, ref in enumerate(cfg.ref_mics):
        rtfs = _constraint_rtfs(cfg, n_bins, rtf_target, rtf_interferer, ref)
        n_con = rtfs.shape[1]
        betas = betas_all[:n_con]
        c = constraint_matrix(rtfs, ref, ybar.shape[1])
        rc = state.rinv[:, :, :cfg.n_mics] @ c[:, :cfg.n_mics, :]
        gram = hermitize(herm(c[:, :cfg.n_mics, :]) @ rc[:, :cfg.n_mics, :])
        bad = ~(gram_condition(gram) <= GRAM_COND_MAX)
        if np.any(bad):
            gram[bad] = np.eye(n_con)
        b = betas * np.conj(c[:, ref, :])
        h_new = np.einsum("kdj,kj->kd", rc, hpd_solve(gram, b))
        state.h[~bad, nu] = h_new[~bad]
        held |= bad
        state.constraint_err[:, nu] = constraint_error(state.h[:, nu], c, betas)
    state.held = held
    state.n_constraints = n_con

    if state.frame_ring.shape[1]:
        state.frame_ring = np.roll(state.frame_ring, 1, axis=1)
        state.frame_ring[:, 0] = y
    d = np.einsum("kvd,kd->kv", np.conj(state.h), ybar)
    return d[:, 0], d[:, 1]


def stack_all(spec, filter_len, delay):
    """Stacked observations for every frame: ``(n_frames, ..., D)`` from ``(n_frames, ..., M)``."""
    n_frames = spec.shape[0]
    parts = [spec]
    for lag in range(delay, filter_len):
        shifted = np.zeros_like(spec)
        shifted[lag:] = spec[:n_frames - lag]
        parts.append(shifted)
    return np.concatenate(parts, axis=-1)


def lp_objective(d_left, d_right, p):
    """Joint output cost ``sum_n (|d_L|^2 + |d_R|^2)^(p/2)`` (log-power for p = 0)."""
    power = np.abs(d_left) ** 2 + np.abs(d_right) ** 2
    if p == 0:
        return float(np.sum(np.log(np.maximum(power, 1e-300))))
    return float(np.sum(power ** (p / 2)))


@dataclass
class BatchResult:
    d_left: np.ndarray  # (n_frames, n_bins)
    d_right: np.ndarray
    h: np.ndarray  # (n_bins, 2, D)
    objective: list  # per IRLS iteration, after the solve
    constraint_err: np.ndarray  # (n_bins, 2)


def batch_solve(spec, rtf_target, rtf_interferer, cfg, init_reg, n_iters=None, chunk=16):
    """Time-invariant filters from the whole signal (gamma = 1) by IRLS.

    ``spec``: ``(n_frames, n_bins, n_mics)``. The IRLS weights start from the
    passthrough outputs (reference microphones), i.e. all ones for p = 2. Each
    iteration accumulates ``delta I + sum_n w_n ybar_n ybar_n^H``, solves the
    constrained filter per reference and recomputes the weights.
    """
    n_iters = cfg.n_irls_iters if n_iters is None else n_iters
    n_frames, n_bins, n_mics = spec.shape
    init_reg = np.broadcast_to(np.asarray(init_reg, dtype=float), (n_bins,))
    dim = cfg.stack_dim
    d_out = np.zeros((n_frames, n_bins, 2), complex)
    h_out = np.zeros((n_bins, 2, dim), complex)
    err = np.zeros((n_bins, 2))
    objective = np.zeros(n_iters)
    betas_all = cfg.betas
    eye = np.eye(dim)
    for k0 in range(0, n_bins, chunk):
        sl = slice(k0, min(k0 + chunk, n_bins))
        ybar = np.ascontiguousarray(np.swapaxes(stack_all(spec[:, sl], cfg.filter_len, cfg.delay), 0, 1))
        nk = ybar.shape[0]
        power_sum = np.cumsum(np.sum(np.abs(ybar) ** 2, axis=2) / dim, axis=1)
        floor = np.maximum(cfg.weight_floor_rel * power_sum[:, -1:] / n_frames, 1e-300)
        d = ybar[:, :, list(cfg.ref_mics)]
        for it in range(n_iters):
            w = estimate_weight(d[..., 0], d[..., 1], cfg.p, floor)
            r = np.swapaxes(ybar * w[..., None], 1, 2) @ np.conj(ybar)
            r = hermitize(r + init_reg[sl, None, None] * eye)
            h = np.zeros((nk, 2, dim), complex)
            for nu, ref in enumerate(cfg.ref_mics):
                rtfs = _constraint_rtfs(cfg, nk, None if rtf_target is None else rtf_target[sl],
                                        None if rtf_interferer is None else rtf_interferer[sl], ref)
                betas = betas_all[:rtfs.shape[1]]
                c = constraint_matrix(rtfs, ref, dim)
                rc = hpd_solve(r, c)
                gram = hermitize(herm(c) @ rc)
                if np.any(gram_condition(gram) > GRAM_COND_MAX):
                    raise SingularConstraintGram(f"bins {sl.start}..{sl.stop - 1}: singular constraint Gram")
                h[:, nu], _ = _lcmp_from_rc(rc, c, betas, ref)
                err[sl, nu] = constraint_error(h[:, nu], c, betas)
            d = ybar @ np.swapaxes(np.conj(h), 1, 2)
            objective[it] += lp_objective(d[..., 0], d[..., 1], cfg.p)
        d_out[:, sl] = np.swapaxes(d, 0, 1)
        h_out[sl] = h
    return BatchResult(d_out[..., 0], d_out[..., 1], h_out, list(objective), err)
