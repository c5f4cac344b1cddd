"""Small dense complex-matrix kernels.

Every function broadcasts over leading axes, so a stack of per-bin matrices
of shape ``(n_bins, n, n)`` is processed in one call. Matrices are at most a
few dozen rows (stacked beamformer dimension), so plain numpy loops over the
matrix dimension are cheap.
"""

import numpy as np

HERMITIAN_TOL = 1e-6
SOLVE_TOL = 1e-9
GEVD_TOL = 1e-8
DENOM_FLOOR = 1e-30
SYMMETRIZE_EVERY = 8  # frame loops symmetrize recursive inverses this often


class LinalgError(ValueError):
    pass


class NotHermitian(LinalgError):
    pass


class NotPositiveDefinite(LinalgError):
    pass


class DegenerateDenominator(LinalgError):
    pass


def herm(a):
    """Conjugate transpose over the last two axes."""
    return np.conj(np.swapaxes(a, -1, -2))


def hermitize(a):
    """Return ``(A + A^H) / 2``; the result is exactly Hermitian."""
    return 0.5 * (a + herm(a))


def check_hermitian(a, tol=HERMITIAN_TOL):
    a = np.asarray(a)
    if a.shape[-1] != a.shape[-2]:
        raise NotHermitian(f"matrix is not square: {a.shape[-2:]}")
    if a.size == 0:
        return
    dev = np.max(np.abs(a - herm(a)))
    scale = np.max(np.abs(a))
    if dev > tol * scale:
        raise NotHermitian(f"max|A - A^H| = {dev:.3e} exceeds {tol:g} * max|A| = {scale:.3e}")


def cholesky(a):
    """Lower Cholesky factor of a stack of Hermitian positive-definite matrices."""
    try:
        low = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.isfinite(low)):
        raise NotPositiveDefinite("non-finite Cholesky factor")
    return low


def solve_lower(low, b):
    """Forward substitution ``L X = B`` for lower-triangular ``L``; B is (..., n, k)."""
    n = low.shape[-1]
    x = np.zeros(np.broadcast_shapes(low.shape[:-2], b.shape[:-2]) + b.shape[-2:],
                 dtype=np.result_type(low, b))
    for i in range(n):
        acc = b[..., i, :]
        if i:
            acc = acc - np.einsum("...j,...jk->...k", low[..., i, :i], x[..., :i, :])
        x[..., i, :] = acc / low[..., i, i, None]
    return x


def solve_upper(up, b):
    """Back substitution ``U X = B`` for upper-triangular ``U``."""
    n = up.shape[-1]
    x = np.zeros(np.broadcast_shapes(up.shape[:-2], b.shape[:-2]) + b.shape[-2:],
                 dtype=np.result_type(up, b))
    for i in range(n - 1, -1, -1):
        acc = b[..., i, :]
        if i < n - 1:
            acc = acc - np.einsum("...j,...jk->...k", up[..., i, i + 1:], x[..., i + 1:, :])
        x[..., i, :] = acc / up[..., i, i, None]
    return x


def hpd_solve(a, b):
    """Solve ``A X = B`` for Hermitian positive-definite ``A`` via Cholesky.

    ``b`` may be a matrix ``(..., n, k)`` or a vector ``(..., n)``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    check_hermitian(a)
    vector = b.ndim == a.ndim - 1
    if vector:
        b = b[..., None]
    if b.shape[-2] != a.shape[-1]:
        raise ValueError(f"row mismatch: A is {a.shape[-2:]}, B has {b.shape[-2]} rows")
    low = cholesky(a)
    x = solve_upper(herm(low), solve_lower(low, b))
    return x[..., 0] if vector else x


def rank_one_inverse_update(ainv, x, w, gamma, denom_floor=DENOM_FLOOR, u=None, symmetrize=True):
    """Inverse of ``gamma * A + w * x x^H`` given ``Ainv = A^{-1}`` (Woodbury).

    ``w`` broadcasts over the leading (batch) axes of ``ainv``. ``u`` may pass
    a precomputed ``Ainv @ x``. Rounding makes the recursion drift away from
    Hermitian symmetry, so the result is symmetrized unless ``symmetrize`` is
    False; callers that skip it must symmetrize every few updates.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if u is None:
        u = (ainv @ x[..., None])[..., 0]
    denom = gamma + w * np.real(np.sum(np.conj(x) * u, axis=-1))
    if np.any(np.abs(denom) < denom_floor):
        raise DegenerateDenominator("Woodbury denominator below floor")
    v = np.sqrt(w / denom)[..., None] * u
    upd = v[..., :, None] * np.conj(v[..., None, :])
    np.subtract(ainv, upd, out=upd)
    if symmetrize:
        upd += herm(upd)
        upd *= 0.5 / gamma
    else:
        upd *= 1.0 / gamma
    return upd


def _fix_phase(v, rel_zero=1e-12):
    """Rotate each vector so its first non-negligible entry is real non-negative."""
    mag = np.abs(v)
    nonzero = mag > rel_zero * np.max(mag, axis=-1, keepdims=True)
    idx = np.argmax(nonzero, axis=-1)
    lead = np.take_along_axis(v, idx[..., None], axis=-1)
    lead_mag = np.abs(lead)
    rot = np.where(lead_mag > 0, np.conj(lead) / np.where(lead_mag > 0, lead_mag, 1.0), 1.0)
    v = v * rot
    np.put_along_axis(v, idx[..., None], np.abs(np.take_along_axis(v, idx[..., None], axis=-1)), axis=-1)
    return v


def gevd_principal(a, b):
    """Largest generalized eigenpair of the Hermitian pencil ``(A, B)``, B > 0.

    Uses Cholesky whitening ``B = L L^H`` and a Hermitian eigendecomposition of
    ``L^{-1} A L^{-H}``. The eigenvector is unit-norm with its first non-zero
    entry real and non-negative.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    check_hermitian(a)
    check_hermitian(b)
    low = cholesky(hermitize(b))
    # L^{-1} A L^{-H} = L^{-1} (L^{-1} A^H)^H, A Hermitian
    tmp = solve_lower(low, a)
    white = hermitize(solve_lower(low, herm(tmp)))
    vals, vecs = np.linalg.eigh(white)
    y = vecs[..., :, -1]
    v = solve_upper(herm(low), y[..., None])[..., 0]
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return vals[..., -1], _fix_phase(v)


def principal_eigvec(a):
    """Unit-norm eigenvector of the largest eigenvalue of a Hermitian PSD matrix."""
    a = np.asarray(a)
    check_hermitian(a)
    _, vecs = np.linalg.eigh(hermitize(a))
    return _fix_phase(vecs[..., :, -1])
