"""Projected least-squares estimators and their parameter rules."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from projlearn import numerics
from projlearn.problem import ProblemSpec, evaluation_matrix, forward_apply
from projlearn.sampling import Dataset


@dataclass(frozen=True)
class EstimatorConfig:
    m: int
    pinv_rel_tol: float = numerics.DEFAULT_REL_TOL
    truncation_R: float | None = None

    def validate(self, dim: int) -> "EstimatorConfig":
        if int(self.m) != self.m or not 1 <= self.m <= dim:
            raise ValueError(f"m must be an integer in [1, {dim}], got {self.m}")
        if not 0 < self.pinv_rel_tol < 1:
            raise ValueError(f"pinv_rel_tol must lie in (0, 1), got {self.pinv_rel_tol}")
        if self.truncation_R is not None and self.truncation_R < 0:
            raise ValueError(f"truncation_R must be >= 0, got {self.truncation_R}")
        return self


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Estimator output.

    ``coeffs`` are ambient coefficients.  ``residual_empirical_norm`` always
    refers to the least-squares fit, also after truncation.
    """

    coeffs: np.ndarray
    rank_used: int
    empirical_lambda_min: float
    truncated: bool
    residual_empirical_norm: float
    pre_truncation_norm: float

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def to_dict(self) -> dict:
        return {
            "coeffs": [float(v) for v in self.coeffs],
            "rank_used": int(self.rank_used),
            "empirical_lambda_min": float(self.empirical_lambda_min),
            "truncated": bool(self.truncated),
            "residual_empirical_norm": float(self.residual_empirical_norm),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _points(data) -> np.ndarray:
    return data.points if isinstance(data, Dataset) else np.asarray(data, dtype=float)


def design_block(spec: ProblemSpec, data, m: int) -> np.ndarray:
    """``Z[n, j] = (A q_j)(x_n)`` for the first ``m`` family basis vectors."""
    if not 0 <= m <= spec.ambient_dim:
        raise ValueError(f"m must lie in [0, {spec.ambient_dim}], got {m}")
    return spec.subspaces.leading_columns(evaluation_matrix(spec, _points(data)), m)


def empirical_normal(spec: ProblemSpec, data, m: int) -> np.ndarray:
    z = design_block(spec, data, m)
    return z.T @ z / z.shape[0]


def _solve(z: np.ndarray, y: np.ndarray, rel_tol: float):
    n = z.shape[0]
    gram = z.T @ z / n
    rhs = z.T @ y / n
    c = numerics.pinv(gram, rel_tol) @ rhs
    rank = numerics.numerical_rank(gram, rel_tol)
    try:
        lam = numerics.lambda_min_nonzero(gram, rel_tol)
    except numerics.ZeroOperatorError:
        lam = 0.0
    resid = float(np.sqrt(np.mean((z @ c - y) ** 2)))
    return c, rank, lam, resid


def ml_estimate_from_block(spec: ProblemSpec, z: np.ndarray, y, cfg: EstimatorConfig) -> EstimateReport:
    """Same as :func:`ml_estimate` for a precomputed design block ``z``."""
    cfg.validate(spec.ambient_dim)
    y = np.asarray(y, dtype=float)
    c, rank, lam, resid = _solve(z, y, cfg.pinv_rel_tol)
    full = np.zeros(spec.ambient_dim)
    full[: c.size] = c
    coeffs = spec.subspaces.from_family(full)
    report = EstimateReport(coeffs, rank, lam, False, resid, float(np.linalg.norm(c)))
    if cfg.truncation_R is not None:
        report = truncate(report, cfg.truncation_R)
    return report


def ml_estimate(spec: ProblemSpec, data: Dataset, cfg: EstimatorConfig) -> EstimateReport:
    """Minimum-norm least-squares solution in ``V_m``.

    Solves the empirical normal equation ``G c = b`` with the pseudoinverse,
    ``G = Z^T Z / N`` and ``b = Z^T y / N``.  When ``cfg.truncation_R`` is set
    the norm cut-off is applied as well.
    """
    cfg.validate(spec.ambient_dim)
    z = design_block(spec, data, cfg.m)
    return ml_estimate_from_block(spec, z, data.observations, cfg)


def truncate(report: EstimateReport, R: float) -> EstimateReport:
    """Keep the estimate if its norm is at most ``R``, otherwise return zero."""
    if R < 0:
        raise ValueError(f"R must be >= 0, got {R}")
    if report.norm <= R:
        return report
    return replace(report, coeffs=np.zeros_like(report.coeffs), truncated=True)


class MChoice(NamedTuple):
    raw: float
    m: int
    clamped: bool


def choose_m(delta: float, R0: float, n: int, s: float, t: float, dim: int | None = None) -> MChoice:
    """Projection dimension ``(delta / (R0 sqrt(N)))^(-2/(2s+t+1))``.

    Rounded to the nearest integer and clamped to ``[1, dim // 2]``.
    """
    if min(delta, R0, n, s, t) <= 0:
        raise ValueError("delta, R0, n, s and t must all be positive")
    if 2 * s - t + 1 <= 0:
        raise ValueError(f"rate condition 2s - t + 1 > 0 violated (s={s}, t={t})")
    raw = (delta / (R0 * math.sqrt(n))) ** (-2.0 / (2 * s + t + 1))
    upper = dim // 2 if dim is not None else math.inf
    m = int(math.floor(raw + 0.5))
    clamped = m < 1 or m > upper
    m = int(min(max(m, 1), upper))
    return MChoice(raw, m, clamped)


def choose_R(delta: float, lambda_m: float, R0: float, D2: float, multiplier: float = 1.0) -> float:
    """Truncation radius ``2 sqrt(2) delta / lambda_m + (2 D2 + 6) R0``.

    ``multiplier`` scales the whole radius for sensitivity runs.
    """
    if lambda_m <= 0:
        raise ValueError(f"lambda_m must be positive, got {lambda_m}")
    if delta < 0 or R0 < 0 or D2 < 0:
        raise ValueError("delta, R0 and D2 must be nonnegative")
    return multiplier * (2.0 * math.sqrt(2.0) * delta / lambda_m + (2.0 * D2 + 6.0) * R0)


class ProjectedLeastSquares(RegressorMixin, BaseEstimator):
    """Projected minimum-norm least squares, optionally norm-truncated.

    Parameters
    ----------
    problem : ProblemSpec
        Forward operator and subspace family.  Only the deterministic parts
        are used; the noise level is irrelevant for fitting.
    m : int, default=1
        Dimension of the projection subspace ``V_m``.
    pinv_rel_tol : float, default=1e-12
        Relative singular value cut-off of the pseudoinverse.
    truncation_R : float or None, default=None
        If set, estimates with norm above ``truncation_R`` are replaced by 0.

    Attributes
    ----------
    coef_ : ndarray of shape (ambient_dim,)
        Estimated coefficients of the unknown in the ambient basis.
    report_ : EstimateReport
        Rank and conditioning diagnostics of the fit.
    """

    def __init__(self, problem=None, m=1, pinv_rel_tol=numerics.DEFAULT_REL_TOL, truncation_R=None):
        self.problem = problem
        self.m = m
        self.pinv_rel_tol = pinv_rel_tol
        self.truncation_R = truncation_R

    def _config(self) -> EstimatorConfig:
        if not isinstance(self.problem, ProblemSpec):
            raise TypeError("problem must be a ProblemSpec")
        return EstimatorConfig(self.m, self.pinv_rel_tol, self.truncation_R).validate(self.problem.ambient_dim)

    def fit(self, X, y):
        """Fit on design points ``X`` (shape ``(n,)`` or ``(n, 1)``) and observations ``y``."""
        cfg = self._config()
        X, y = check_X_y(np.reshape(X, (-1, 1)) if np.ndim(X) == 1 else X, y, y_numeric=True)
        if X.shape[1] != 1:
            raise ValueError(f"design points must be one-dimensional, got {X.shape[1]} features")
        self.n_features_in_ = 1
        self.report_ = ml_estimate(self.problem, Dataset(X[:, 0], y), cfg)
        self.coef_ = self.report_.coeffs
        return self

    def predict(self, X):
        """Noise-free data ``(A f)(x)`` implied by the fitted coefficients."""
        check_is_fitted(self, "coef_")
        X = check_array(np.reshape(X, (-1, 1)) if np.ndim(X) == 1 else X)
        return forward_apply(self.problem, self.coef_, X[:, 0])

    def reconstruction_error(self, f_true) -> float:
        check_is_fitted(self, "coef_")
        return float(np.linalg.norm(self.coef_ - np.asarray(getattr(f_true, "coeffs", f_true))))
