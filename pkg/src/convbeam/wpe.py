"""Adaptive MIMO weighted prediction error (WPE) dereverberation.

Recursive least squares with exponential forgetting, run for all frequency
bins at once. The prediction uses only frames ``t - delay ... t - filter_len + 1``
so the direct sound and early reflections in ``t - delay + 1 ... t`` are kept.
"""

from dataclasses import dataclass

import numpy as np

from .linalg import SYMMETRIZE_EVERY, rank_one_inverse_update
from .stft import ConfigInvalid

POWER_FLOOR_REL = 1e-10


@dataclass
class WpeState:
    inv_corr: np.ndarray  # (n_bins, D, D), D = n_mics * (filter_len - delay)
    pred_filters: np.ndarray  # (n_bins, D, n_mics)
    delay_buffer: np.ndarray  # (n_bins, filter_len - 1, n_mics); row 0 is frame t-1
    filter_len: int
    delay: int
    gamma: float
    p: float
    frozen: bool = False
    power_sum: np.ndarray = None
    n_frames: int = 0

    @property
    def n_mics(self):
        return self.delay_buffer.shape[-1]

    def delayed_stack(self):
        rows = self.delay_buffer[:, self.delay - 1:self.filter_len - 1]
        return rows.reshape(rows.shape[0], -1)


def wpe_init(n_mics, filter_len, delay, gamma, reg, p=0.0, n_bins=1):
    """Fresh state with ``inv_corr = I / reg`` and zero prediction filters.

    ``reg`` may be a scalar or a per-bin array.
    """
    if not (filter_len >= delay >= 1):
        raise ConfigInvalid("need filter_len >= delay >= 1")
    if not 0 < gamma <= 1:
        raise ConfigInvalid("gamma must lie in (0, 1]")
    reg = np.broadcast_to(np.asarray(reg, dtype=float), (n_bins,))
    if np.any(reg <= 0):
        raise ConfigInvalid("regularization must be positive")
    dim = n_mics * (filter_len - delay)
    inv_corr = np.eye(dim, dtype=complex)[None] / reg[:, None, None]
    return WpeState(
        inv_corr=inv_corr,
        pred_filters=np.zeros((n_bins, dim, n_mics), complex),
        delay_buffer=np.zeros((n_bins, max(filter_len - 1, 0), n_mics), complex),
        filter_len=filter_len,
        delay=delay,
        gamma=gamma,
        p=p,
        power_sum=np.zeros(n_bins),
    )


def wpe_step(state, y):
    """Dereverberate one frame ``y`` of shape ``(n_bins, n_mics)``; updates ``state``."""
    y = np.asarray(y, dtype=complex)
    x = state.delayed_stack()
    if x.shape[1]:
        z = y - np.einsum("kdm,kd->km", np.conj(state.pred_filters), x)
    else:
        z = y.copy()

    state.n_frames += 1
    state.power_sum += np.mean(np.abs(y) ** 2, axis=1)
    if x.shape[1] and not state.frozen:
        active = np.any(x != 0, axis=1)
        if np.any(active):
            floor = POWER_FLOOR_REL * state.power_sum / state.n_frames
            power = np.mean(np.abs(z) ** 2, axis=1)
            weight = np.maximum(power, np.maximum(floor, 1e-300)) ** (state.p / 2 - 1)
            weight = np.where(active, weight, 0.0)
            u = (state.inv_corr @ x[:, :, None])[:, :, 0]
            denom = state.gamma + weight * np.real(np.einsum("ki,ki->k", np.conj(x), u))
            gain = (weight / denom)[:, None] * u
            new_inv = rank_one_inverse_update(state.inv_corr, x, weight, state.gamma, u=u,
                                              symmetrize=state.n_frames % SYMMETRIZE_EVERY == 0)
            if np.all(active):
                state.inv_corr = new_inv
            else:
                state.inv_corr = np.where(active[:, None, None], new_inv, state.inv_corr)
            state.pred_filters = state.pred_filters + gain[:, :, None] * np.conj(z)[:, None, :]

    if state.delay_buffer.shape[1]:
        state.delay_buffer = np.roll(state.delay_buffer, 1, axis=1)
        state.delay_buffer[:, 0] = y
    return z


def wpe_run(spec, state):
    """Process a whole ``(n_frames, n_bins, n_mics)`` tensor frame by frame."""
    out = np.empty_like(spec)
    for t in range(spec.shape[0]):
        out[t] = wpe_step(state, spec[t])
    return out
