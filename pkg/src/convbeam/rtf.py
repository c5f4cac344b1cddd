"""RTF estimation by covariance whitening, with oracle-period covariance tracking.

Covariances are tracked per frequency bin on the dereverberated (WPE) signals.
Noise-only and noise-plus-interferer periods are given by oracle labels; the
target covariance is tracked with exponential smoothing.
"""

from enum import IntEnum

import numpy as np

from .linalg import LinalgError, gevd_principal, hermitize, principal_eigvec

REF_FLOOR = 1e-12
COV_REG = 1e-6


class DegenerateRtf(LinalgError):
    pass


class ZeroVector(ValueError):
    pass


class Label(IntEnum):
    NOISE_ONLY = 0
    NOISE_PLUS_INTERFERER = 1
    TARGET_1 = 2
    TARGET_2 = 3

    @property
    def is_target(self):
        return self >= Label.TARGET_1


def hermitian_angle(v_est, v_true):
    """Scale- and phase-invariant angle (rad) between complex vectors, last axis."""
    v_est = np.asarray(v_est)
    v_true = np.asarray(v_true)
    n1 = np.linalg.norm(v_est, axis=-1)
    n2 = np.linalg.norm(v_true, axis=-1)
    if np.any(n1 == 0) or np.any(n2 == 0):
        raise ZeroVector("hermitian_angle of a zero vector")
    c = np.abs(np.sum(np.conj(v_est) * v_true, axis=-1)) / (n1 * n2)
    return np.arccos(np.clip(c, 0.0, 1.0))


def regularize(r, eps=COV_REG):
    m = r.shape[-1]
    load = eps * np.real(np.trace(r, axis1=-2, axis2=-1)) / m
    load = np.where(load > 0, load, eps)
    return hermitize(r) + load[..., None, None] * np.eye(m)


def whitening_direction(r_sv, r_v, eps=COV_REG):
    """De-whitened principal generalized eigenvector ``R_v u`` and its eigenvalue."""
    r_v = regularize(r_v, eps)
    lam, u = gevd_principal(hermitize(r_sv), r_v)
    return np.einsum("...ij,...j->...i", r_v, u), lam


def normalize_rtf(v, ref_mic):
    """Scale so that entry ``ref_mic`` equals exactly 1."""
    ref = v[..., ref_mic:ref_mic + 1]
    if np.any(np.abs(ref) < REF_FLOOR):
        raise DegenerateRtf("reference entry too small to normalize")
    out = v / ref
    out[..., ref_mic] = 1.0
    return out


def estimate_rtf(r_source_plus_v, r_v, ref_mic, eps=COV_REG, min_excess=1e-8):
    """RTF of the dominant source in ``r_source_plus_v`` relative to ``r_v``.

    Raises DegenerateRtf when the pencil carries no source (principal
    generalized eigenvalue not above 1) or the reference entry vanishes.
    """
    v, lam = whitening_direction(r_source_plus_v, r_v, eps)
    if np.any(lam <= 1.0 + min_excess):
        raise DegenerateRtf("no source energy above the noise covariance")
    return normalize_rtf(v, ref_mic)


class RtfTracker:
    """Per-bin covariance bookkeeping and RTF estimates (all bins at once).

    ``rtf_target`` / ``rtf_interferer`` hold unnormalized direction vectors of
    shape ``(n_bins, n_mics)``, or ``None`` until the corresponding oracle
    period has provided data. Use :func:`normalize_rtf` to pick a reference.
    ``gamma_cov = 1`` switches target tracking to a running arithmetic mean.
    """

    def __init__(self, n_bins, n_mics, gamma_cov, eps=COV_REG):
        if not 0 < gamma_cov <= 1:
            raise ValueError("gamma_cov must lie in (0, 1]")
        self.gamma_cov = gamma_cov
        self.eps = eps
        shape = (n_bins, n_mics, n_mics)
        self.r_noise = np.zeros(shape, complex)
        self.r_noise_plus_intf = np.zeros(shape, complex)
        self.r_target = np.zeros(shape, complex)
        self.counts = {label: 0 for label in Label}
        self.n_target = 0
        self.rtf_target = None
        self.rtf_interferer = None
        self._frozen = False

    @property
    def n_bins(self):
        return self.r_noise.shape[0]

    def mean_noise(self):
        n = self.counts[Label.NOISE_ONLY]
        return self.r_noise / n if n else None

    def mean_noise_plus_intf(self):
        n = self.counts[Label.NOISE_PLUS_INTERFERER]
        return self.r_noise_plus_intf / n if n else None

    def target_noise_cov(self):
        """Covariance of everything but the target: noise plus interferer if seen."""
        r = self.mean_noise_plus_intf()
        return r if r is not None else self.mean_noise()

    def _freeze_interferer(self):
        r_ni = self.mean_noise_plus_intf()
        r_n = self.mean_noise()
        if r_ni is not None:
            if r_n is not None:
                self.rtf_interferer, _ = whitening_direction(r_ni, r_n, self.eps)
            else:
                self.rtf_interferer = principal_eigvec(hermitize(r_ni))
        r_v = self.target_noise_cov()
        if r_v is not None and self.gamma_cov < 1:
            self.r_target = r_v.copy()
        self._frozen = True

    def update(self, z, label):
        z = np.asarray(z)
        label = Label(label)
        outer = z[:, :, None] * np.conj(z[:, None, :])
        if self._frozen and not label.is_target:
            return
        self.counts[label] += 1
        if label == Label.NOISE_ONLY:
            self.r_noise += outer
            return
        if label == Label.NOISE_PLUS_INTERFERER:
            self.r_noise_plus_intf += outer
            return
        if not self._frozen:
            self._freeze_interferer()
        self.n_target += 1
        if self.gamma_cov < 1:
            self.r_target = hermitize(self.gamma_cov * self.r_target + (1 - self.gamma_cov) * outer)
        else:
            self.r_target = self.r_target + (outer - self.r_target) / self.n_target
            self.r_target = hermitize(self.r_target)
        r_v = self.target_noise_cov()
        if r_v is None:
            self.rtf_target = principal_eigvec(hermitize(self.r_target) + self.eps * np.eye(z.shape[1]))
        else:
            self.rtf_target, _ = whitening_direction(self.r_target, r_v, self.eps)


def rtf_update(state, z, label):
    state.update(z, label)
    return state
