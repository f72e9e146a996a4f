"""Dense linear-algebra kernel.

All routines take array-likes, never mutate their inputs and return fresh
``numpy`` arrays or floats.  LAPACK (through ``numpy.linalg``) does the heavy
lifting; this module pins down rank thresholds, symmetry handling and sign
conventions so that every caller agrees on them.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

DEFAULT_REL_TOL = 1e-12
SYMMETRY_TOL = 1e-10


class ConvergenceError(RuntimeError):
    """The iterative SVD/eigen solver failed to converge."""


class ZeroOperatorError(ValueError):
    """Every eigenvalue of the operator is below the rank threshold."""


class SvdFactors(NamedTuple):
    left: np.ndarray
    singulars: np.ndarray
    right: np.ndarray


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _symmetrized(a, tol: float = SYMMETRY_TOL) -> np.ndarray:
    a = _as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    asym = float(np.max(np.abs(a - a.T)))
    if asym > tol * scale:
        raise ValueError(f"matrix is not symmetric (max |A - A^T| = {asym:.3e})")
    return 0.5 * (a + a.T)


def svd(a) -> SvdFactors:
    """Thin SVD with a deterministic sign convention.

    Each left singular vector is flipped so that its largest-magnitude entry
    is nonnegative; the matching right vector is flipped with it.
    """
    a = _as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge for shape {a.shape}") from exc
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return SvdFactors(u * signs, s, vt.T * signs)


def pinv(a, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Moore-Penrose pseudoinverse.

    Singular values ``<= rel_tol * sigma_max`` are treated as exact zeros.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    a = _as_matrix(a)
    u, s, v = svd(a)
    if s[0] == 0.0:
        return np.zeros(a.shape[::-1])
    keep = s > rel_tol * s[0]
    return (v[:, keep] / s[keep]) @ u[:, keep].T


def numerical_rank(a, rel_tol: float = DEFAULT_REL_TOL) -> int:
    s = svd(a).singulars
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def _eigvalsh(a: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("symmetric eigensolver did not converge") from exc


def lambda_min_nonzero(a, rel_tol: float = DEFAULT_REL_TOL) -> float:
    """Smallest eigenvalue of a PSD matrix strictly above ``rel_tol * lambda_max``."""
    w = _eigvalsh(_symmetrized(a))
    lam_max = w[-1]
    if lam_max <= 0.0:
        raise ZeroOperatorError("zero operator: no positive eigenvalue")
    nonzero = w[w > rel_tol * lam_max]
    return float(nonzero[0])


def hs_norm(a) -> float:
    return float(np.linalg.norm(_as_matrix(a), "fro"))


def op_norm(a) -> float:
    return float(svd(a).singulars[0])


def sqrt_psd(a) -> np.ndarray:
    """Symmetric PSD square root; tiny negative eigenvalues from rounding are clipped."""
    sym = _symmetrized(a)
    try:
        w, v = np.linalg.eigh(sym)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("symmetric eigensolver did not converge") from exc
    floor = -SYMMETRY_TOL * max(1.0, float(np.max(np.abs(w))))
    if w[0] < floor:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    # eigenvalues at rounding level are zeros; their square roots would not be
    noise = w.size * np.finfo(float).eps * max(float(np.max(np.abs(w))), 0.0)
    root = (v * np.sqrt(np.where(w > noise, w, 0.0))) @ v.T
    return 0.5 * (root + root.T)
