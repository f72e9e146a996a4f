"""Population operators, design-class certificates and Monte Carlo checks.

Matrices here live on the ambient truncation.  Quantities tied to the
subspace family (profiles, cross terms, event checks) are evaluated in
family coordinates, ``Q^T B Q``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy import stats

from projlearn import numerics
from projlearn._parallel import map_trials
from projlearn.estimator import EstimatorConfig, choose_m, choose_R, ml_estimate_from_block, truncate
from projlearn.problem import GroundTruth, ProblemSpec, SubspaceFamily, cosine_features, evaluation_matrix
from projlearn.sampling import Dataset, SeedPlan, draw_design, draw_noise

QUAD_NODES = 64
QUAD_PANELS = 8
QUAD_TOL = 1e-8
MONOTONE_TOL = 1e-10


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class PopulationOperator:
    matrix: np.ndarray
    method: str
    quadrature_nodes: int = 0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def in_family(self, family: SubspaceFamily) -> np.ndarray:
        if family.kind == "coordinate":
            return np.array(self.matrix)
        q = family.basis(self.dim)
        return q.T @ self.matrix @ q


# ---------------------------------------------------------------------------
# population operator
# ---------------------------------------------------------------------------


def _cosine_moments(degree: int, n_max: int) -> np.ndarray:
    """``I[d, n] = int_0^1 x^d cos(n pi x) dx`` via integration by parts."""
    n = np.arange(n_max + 1, dtype=float)
    I = np.zeros((degree + 1, n_max + 1))
    I[:, 0] = 1.0 / np.arange(1, degree + 2)
    w = np.pi * n[1:]
    cos_w = np.cos(w)
    # J_d = int_0^1 x^d sin(n pi x) dx; sin(n pi) = 0 kills the boundary term of I_d
    J = (1.0 - cos_w) / w
    for d in range(1, degree + 1):
        I_prev = I[d - 1, 1:]
        I[d, 1:] = -d / w * J
        J = -cos_w / w + d / w * I_prev
    return I


def _feature_gram_analytic(spec: ProblemSpec) -> np.ndarray:
    """``C[k, l] = int phi_k phi_l p dx`` in closed form for polynomial densities."""
    M = spec.ambient_dim
    if spec.design.kind == "uniform01":
        return np.eye(M)
    coef = np.asarray(spec.design.coefficients)
    mom = coef @ _cosine_moments(coef.size - 1, 2 * M)  # int p(x) cos(n pi x) dx
    k = np.arange(M)
    C = mom[np.abs(k[:, None] - k[None, :])] + mom[k[:, None] + k[None, :]]
    C[0, 1:] = np.sqrt(2.0) * mom[k[1:]]
    C[1:, 0] = C[0, 1:]
    C[0, 0] = mom[0]
    return C


def _feature_gram_quadrature(spec: ProblemSpec, panels: int, nodes: int) -> np.ndarray:
    ref_x, ref_w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    x = (edges[:-1, None] + half[:, None] * (ref_x[None, :] + 1.0)).ravel()
    w = (half[:, None] * ref_w[None, :]).ravel() * spec.design.pdf(x)
    F = cosine_features(x, spec.ambient_dim)
    return F.T @ (F * w[:, None])


def _sandwich(spec: ProblemSpec, C: np.ndarray) -> np.ndarray:
    if spec.forward.kind == "diagonal_cosine":
        a = spec.kernel_scale * spec.forward.singulars
        B = C * np.outer(a, a)
    else:
        W = spec.operator_matrix()
        B = W @ C @ W.T
    return 0.5 * (B + B.T)


def assemble_b_nu(
    spec: ProblemSpec, method: str = "auto", panels: int | None = None, nodes: int = QUAD_NODES
) -> PopulationOperator:
    """Population normal operator ``B[i, j] = int (A e_i)(A e_j) dnu``.

    ``auto`` uses the closed form for the uniform design with a diagonal
    operator and composite Gauss-Legendre quadrature otherwise.  ``analytic``
    forces the closed form, which exists for every polynomial density.
    Quadrature results are accepted only if ``panels`` and ``2 * panels``
    agree to 1e-8.  The default is 8 panels per started block of 256 ambient
    dimensions.
    """
    if method == "auto":
        method = "analytic" if spec.design.kind == "uniform01" and spec.forward.kind == "diagonal_cosine" else "quadrature"
    if method == "analytic":
        return PopulationOperator(_sandwich(spec, _feature_gram_analytic(spec)), "analytic")
    if method != "quadrature":
        raise ValueError(f"unknown assembly method {method!r}")
    if panels is None:
        panels = QUAD_PANELS * max(1, math.ceil(spec.ambient_dim / 256))
    coarse = _sandwich(spec, _feature_gram_quadrature(spec, panels, nodes))
    fine = _sandwich(spec, _feature_gram_quadrature(spec, 2 * panels, nodes))
    gap = float(np.max(np.abs(fine - coarse)))
    if gap > QUAD_TOL:
        raise QuadratureError(f"quadrature with {panels} and {2 * panels} panels disagrees by {gap:.2e}")
    return PopulationOperator(fine, "quadrature", 2 * panels * nodes)


def spectral_family(B: PopulationOperator) -> SubspaceFamily:
    """Subspaces spanned by eigenvectors of ``B`` in decreasing eigenvalue order.

    In this family every cross term vanishes and the projected estimator is
    truncated SVD.
    """
    w, v = np.linalg.eigh(numerics._symmetrized(B.matrix))
    v = v[:, np.argsort(w, kind="stable")[::-1]]
    idx = np.argmax(np.abs(v), axis=0)
    v = v * np.where(v[idx, np.arange(v.shape[1])] < 0, -1.0, 1.0)
    return SubspaceFamily("rotated", rotation=v)


# ---------------------------------------------------------------------------
# design classes
# ---------------------------------------------------------------------------


def lambda_profile(B: PopulationOperator, family: SubspaceFamily, m_max: int) -> np.ndarray:
    """Smallest nonzero eigenvalue of the leading ``m x m`` section, ``m = 1..m_max``."""
    if not 1 <= m_max <= B.dim:
        raise ValueError(f"m_max must lie in [1, {B.dim}], got {m_max}")
    Bf = B.in_family(family)
    return np.array([numerics.lambda_min_nonzero(Bf[:m, :m]) for m in range(1, m_max + 1)])


def _cross_term(Bf: np.ndarray, m: int) -> float:
    head = numerics.pinv(Bf[:m, :m])
    return numerics.op_norm(head @ Bf[:m, m:])


def cross_term(B: PopulationOperator, family: SubspaceFamily, m: int) -> float:
    """``||(P_m B P_m)^+ B (I - P_m)||`` with the tail cut at the ambient dimension.

    The truncated tail makes this a lower bound of the untruncated norm.
    """
    if not 1 <= m <= B.dim // 2:
        raise ValueError(f"m must lie in [1, {B.dim // 2}], got {m}")
    return _cross_term(B.in_family(family), m)


@dataclass(frozen=True)
class ClassCertificate:
    """Fitted membership constants, valid on ``m_range`` only.

    ``D2_max`` is computed with the tail cut at the ambient dimension and is
    therefore a lower bound of the untruncated cross-term constant.
    """

    t_fit: float
    D1_fit: float
    D3_fit: float
    D2_max: float
    m_range: tuple[int, int]
    lambdas: tuple = field(repr=False, default=())

    def holds(self, slack: float = 1e-10) -> bool:
        m = np.arange(self.m_range[0], self.m_range[1] + 1, dtype=float)
        lam = np.asarray(self.lambdas)
        lower = self.D1_fit * m ** (-self.t_fit)
        upper = self.D3_fit * m ** (-self.t_fit)
        return bool(np.all(lam >= lower * (1 - slack)) and np.all(lam <= upper * (1 + slack)))

    def to_dict(self) -> dict:
        return {
            "t_fit": self.t_fit,
            "D1_fit": self.D1_fit,
            "D3_fit": self.D3_fit,
            "D2_max": self.D2_max,
            "m_range": list(self.m_range),
            "note": "D2_max uses the tail truncated at the ambient dimension (lower bound)",
        }


def certify_classes(B: PopulationOperator, family: SubspaceFamily, m_range: tuple[int, int] | None = None) -> ClassCertificate:
    """Fit ``lambda_m ~ m^-t`` by log-log least squares and bracket it.

    ``D1 = min lambda_m m^t``, ``D3 = max lambda_m m^t`` and ``D2_max`` is the
    largest cross term over the range.
    """
    lo, hi = m_range if m_range is not None else (1, B.dim // 2)
    if not 1 <= lo < hi <= B.dim // 2:
        raise ValueError(f"m_range must satisfy 1 <= lo < hi <= {B.dim // 2}, got {(lo, hi)}")
    Bf = B.in_family(family)
    lam_all = np.array([numerics.lambda_min_nonzero(Bf[:m, :m]) for m in range(1, hi + 1)])
    if np.any(np.diff(lam_all) > MONOTONE_TOL * lam_all[:-1]):
        bad = int(np.argmax(np.diff(lam_all) > MONOTONE_TOL * lam_all[:-1])) + 2
        raise ValueError(f"lambda profile increases at m={bad}; the subspace family is misconfigured")
    lam = lam_all[lo - 1 :]
    m = np.arange(lo, hi + 1, dtype=float)
    slope, _ = np.polyfit(np.log(m), np.log(lam), 1)
    t_fit = -float(slope)
    scaled = lam * m**t_fit
    d2 = max(_cross_term(Bf, int(k)) for k in range(lo, hi + 1))
    return ClassCertificate(t_fit, float(scaled.min()), float(scaled.max()), float(d2), (lo, hi), tuple(lam))


# ---------------------------------------------------------------------------
# error decomposition and the spectral cross-check
# ---------------------------------------------------------------------------


def _truth_coeffs(f_true) -> np.ndarray:
    return np.asarray(f_true.coeffs if isinstance(f_true, GroundTruth) else f_true, dtype=float)


def error_split(spec: ProblemSpec, data: Dataset, f_true, m: int, rel_tol: float = numerics.DEFAULT_REL_TOL):
    """Approximation and noise parts of the reconstruction error.

    ``I1 = ((P_m B_X P_m)^+ B_X - I) f`` and
    ``I2 = delta (P_m B_X P_m)^+ (S_X A)^* eps``, returned as ambient vectors.
    Needs synthetic data, since ``eps`` is regenerated from the dataset seed.
    """
    if data.seed is None:
        raise ValueError("error_split needs a synthetic dataset (the noise vector is regenerated from its seed)")
    fam = spec.subspaces
    n = data.n
    E = fam.to_family(evaluation_matrix(spec, data.points))
    c_true = fam.to_family(_truth_coeffs(f_true))
    Z = E[:, :m]
    G_pinv = numerics.pinv(Z.T @ Z / n, rel_tol)
    i1 = np.zeros(spec.ambient_dim)
    i1[:m] = G_pinv @ ((Z.T @ E) / n @ c_true)
    i1 -= c_true
    i2 = np.zeros(spec.ambient_dim)
    if data.noise_delta > 0:
        i2[:m] = data.noise_delta * (G_pinv @ (Z.T @ data.noise()) / n)
    return fam.from_family(i1), fam.from_family(i2)


def tsvd_estimate(spec: ProblemSpec, data: Dataset, m: int, B: PopulationOperator) -> np.ndarray:
    """Least squares on the top-``m`` eigenvectors of ``B`` (LAPACK ``gelsd``).

    Shares no code path with the projected estimator: the subspace comes
    from an eigendecomposition and the solve does not form normal equations.
    """
    w, v = np.linalg.eigh(B.matrix)
    top = v[:, np.argsort(w)[::-1][:m]]
    E = evaluation_matrix(spec, data.points)
    c, *_ = np.linalg.lstsq(E @ top, data.observations, rcond=None)
    return top @ c


# ---------------------------------------------------------------------------
# operator concentration
# ---------------------------------------------------------------------------


def _hs_deviation(spec: ProblemSpec, B: np.ndarray, n: int, plan: SeedPlan) -> float:
    E = evaluation_matrix(spec, draw_design(spec.design, n, plan))
    return numerics.hs_norm(E.T @ E / n - B)


def concentration_bound(n: int, eta: float) -> float:
    return 6.0 * math.log(2.0 / eta) / math.sqrt(n)


@dataclass(frozen=True)
class ConcentrationTable:
    n: int
    trials: int
    etas: tuple
    bounds: tuple
    exceedance: tuple
    median: float
    deviations: tuple = field(repr=False)

    def rows(self) -> list[dict]:
        return [
            {"n": self.n, "eta": e, "bound": b, "exceedance": x, "median_hs_deviation": self.median}
            for e, b, x in zip(self.etas, self.bounds, self.exceedance)
        ]


def concentration_experiment(
    spec: ProblemSpec, n: int, trials: int, etas, seed: int, B: PopulationOperator | None = None, workers: int = 1
) -> ConcentrationTable:
    """Exceedance frequency of ``||B_X - B_nu||_HS > 6 log(2/eta) / sqrt(N)``."""
    if trials < 100:
        raise ValueError("concentration_experiment needs at least 100 trials")
    B = B if B is not None else assemble_b_nu(spec)
    plan = SeedPlan(seed)
    devs = np.array(map_trials(partial(_hs_deviation, spec, B.matrix, n), [plan.trial(i) for i in range(trials)], workers))
    etas = tuple(float(e) for e in etas)
    bounds = tuple(concentration_bound(n, e) for e in etas)
    exceed = tuple(float(np.mean(devs > b)) for b in bounds)
    return ConcentrationTable(n, trials, etas, bounds, exceed, float(np.median(devs)), tuple(devs))


# ---------------------------------------------------------------------------
# high-probability bound and rates
# ---------------------------------------------------------------------------


def error_bracket(R0: float, m: int, s: float, t: float, delta: float, n: int, eta: float) -> float:
    """``R0 m^-s + log(8/eta) delta (m^t / N + m^((t+1)/2) / sqrt(N))``."""
    return R0 * m ** (-s) + math.log(8.0 / eta) * delta * (m**t / n + m ** ((t + 1) / 2) / math.sqrt(n))


def _trial_error(spec: ProblemSpec, coeffs: np.ndarray, n: int, m: int, R: float | None, plan: SeedPlan):
    E = evaluation_matrix(spec, draw_design(spec.design, n, plan))
    y = E @ coeffs
    if spec.noise_delta > 0:
        y = y + spec.noise_delta * draw_noise(n, plan)
    Z = spec.subspaces.leading_columns(E, m)
    report = ml_estimate_from_block(spec, Z, y, EstimatorConfig(m))
    pre = float(np.linalg.norm(report.coeffs - coeffs))
    if R is None:
        return pre, pre, False
    g = truncate(report, R)
    return float(np.linalg.norm(g.coeffs - coeffs)), pre, g.truncated


@dataclass(frozen=True)
class HighProbRow:
    n: int
    m: int
    eta: float
    quantile: float
    bracket: float
    ratio: float


def high_prob_bound_check(
    spec: ProblemSpec,
    f_true: GroundTruth,
    n: int,
    m: int,
    eta: float,
    trials: int,
    seed: int,
    t: float,
    B: PopulationOperator | None = None,
    workers: int = 1,
) -> HighProbRow:
    """Empirical ``(1 - eta)``-quantile of ``||f_{m,N} - f||`` next to the theoretical bracket.

    The ratio estimates the unspecified constant; only its stability across
    ``N`` is meaningful.
    """
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    B = B if B is not None else assemble_b_nu(spec)
    lam = lambda_profile(B, spec.subspaces, m)[-1]
    lhs, rhs = math.log(8.0 / eta), math.sqrt(n) / 12.0 * lam
    if lhs > rhs:
        raise ValueError(
            f"probability condition log(8/eta) <= sqrt(N)/12 * lambda_m violated: {lhs:.4g} > {rhs:.4g} (N={n}, m={m})"
        )
    plan = SeedPlan(seed)
    errs = np.array([e for e, _, _ in map_trials(
        partial(_trial_error, spec, f_true.coeffs, n, m, None), [plan.trial(i) for i in range(trials)], workers
    )])
    q = float(np.quantile(errs, 1.0 - eta))
    bracket = error_bracket(f_true.declared_R0, m, f_true.declared_s, t, spec.noise_delta, n, eta)
    return HighProbRow(n, m, eta, q, bracket, q / bracket)


def min_n_for_probability_condition(lambda_m: float, eta: float) -> int:
    """Smallest ``N`` with ``log(8/eta) <= sqrt(N)/12 * lambda_m``."""
    return int(math.ceil((12.0 * math.log(8.0 / eta) / lambda_m) ** 2))


@dataclass(frozen=True)
class RateFit:
    grid_N: tuple
    m_values: tuple
    R_values: tuple
    mean_errors: tuple
    slope: float
    slope_stderr: float
    theory_slope: float
    p: float
    constant_ratios: tuple
    truncation_rates: tuple

    @property
    def constant_spread(self) -> float:
        r = np.asarray(self.constant_ratios)
        return float(r.max() / r.min())

    def rows(self) -> list[dict]:
        return [
            {"n": n, "m": m, "R": R, "mean_error": e, "constant_ratio": c, "truncation_rate": tr}
            for n, m, R, e, c, tr in zip(
                self.grid_N, self.m_values, self.R_values, self.mean_errors, self.constant_ratios, self.truncation_rates
            )
        ]


def rate_experiment(
    spec: ProblemSpec,
    f_true: GroundTruth,
    grid_N,
    trials: int,
    p: float = 2.0,
    seed: int = 0,
    t: float | None = None,
    D2: float = 0.0,
    R_multiplier: float = 1.0,
    eta: float = 0.1,
    B: PopulationOperator | None = None,
    workers: int = 1,
) -> RateFit:
    """Monte Carlo L^p error of the truncated estimator along a grid of ``N``.

    ``m`` and ``R`` follow the closed-form rules at every ``N``; ``lambda_m``
    comes from the population operator.  ``t`` defaults to the fitted decay
    exponent of the lambda profile.  ``constant_ratios`` hold the empirical
    ``(1 - eta)``-quantile divided by the high-probability bracket.
    """
    grid = tuple(int(n) for n in grid_N)
    if len(grid) < 4 or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid_N must be strictly increasing with at least 4 entries")
    if p <= 0:
        raise ValueError("p must be positive")
    B = B if B is not None else assemble_b_nu(spec)
    M = spec.ambient_dim
    if t is None:
        t = certify_classes(B, spec.subspaces).t_fit
    s, R0, delta = f_true.declared_s, f_true.declared_R0, spec.noise_delta
    if delta <= 0:
        raise ValueError("rate_experiment needs a positive noise level")
    lam = lambda_profile(B, spec.subspaces, M // 2)
    plan = SeedPlan(seed)
    ms, Rs, means, ratios, trunc, weak = [], [], [], [], [], []
    for k, n in enumerate(grid):
        choice = choose_m(delta, R0, n, s, t, M)
        if choice.clamped:
            raise ValueError(f"m({n}) = {choice.raw:.2f} falls outside [1, {M // 2}]; increase the ambient dimension")
        m = choice.m
        lam_m = float(lam[m - 1])
        if p > math.sqrt(n) * lam_m / 24.0 - 0.5:
            weak.append(n)
        R = choose_R(delta, lam_m, R0, D2, R_multiplier)
        # Trial indices are offset per grid point so that every N draws fresh streams.
        seeds = [plan.trial(k * trials + i) for i in range(trials)]
        out = map_trials(partial(_trial_error, spec, f_true.coeffs, n, m, R), seeds, workers)
        errs = np.array([e for e, _, _ in out])
        ms.append(m)
        Rs.append(R)
        means.append(float(np.mean(errs**p) ** (1.0 / p)))
        ratios.append(float(np.quantile(errs, 1.0 - eta)) / error_bracket(R0, m, s, t, delta, n, eta))
        trunc.append(float(np.mean([tr for _, _, tr in out])))
    if weak:
        warnings.warn(f"p={p} exceeds sqrt(N) lambda_m / 24 - 1/2 at N in {weak}; the moment bound is not guaranteed")
    fit = stats.linregress(np.log(grid), np.log(means))
    return RateFit(
        grid, tuple(ms), tuple(Rs), tuple(means), float(fit.slope), float(fit.stderr),
        -s / (2 * s + t + 1), p, tuple(ratios), tuple(trunc),
    )


# ---------------------------------------------------------------------------
# event-conditional checks
# ---------------------------------------------------------------------------


def _event_trial(spec: ProblemSpec, Bf: np.ndarray, lam_m: float, coeffs: np.ndarray, n: int, m: int, plan: SeedPlan):
    fam = spec.subspaces
    E = fam.to_family(evaluation_matrix(spec, draw_design(spec.design, n, plan)))
    Bx = E.T @ E / n
    dev = numerics.hs_norm(Bx - Bf)
    y = E @ fam.to_family(coeffs)
    if spec.noise_delta > 0:
        y = y + spec.noise_delta * draw_noise(n, plan)
    G = Bx[:m, :m]
    G_pinv = numerics.pinv(G)
    c = G_pinv @ (E[:, :m].T @ y / n)
    c_true = fam.to_family(coeffs)
    i1 = np.concatenate([G_pinv @ (Bx[:m, :] @ c_true), np.zeros(spec.ambient_dim - m)]) - c_true
    return {
        "in_event": dev <= 0.5 * lam_m,
        "hs_deviation": dev,
        "a1": numerics.hs_norm(np.eye(m) - numerics.pinv(Bf[:m, :m]) @ G),
        "a2": numerics.op_norm(G_pinv),
        "a3": numerics.op_norm(G_pinv @ Bf[:m, :m]),
        "a4": numerics.op_norm(G_pinv @ Bx[:m, m:]),
        "i1": float(np.linalg.norm(i1)),
        "estimate_norm": float(np.linalg.norm(c)),
    }


@dataclass(frozen=True)
class InequalityReport:
    n: int
    m: int
    trials: int
    event_trials: int
    lambda_m: float
    D2: float
    bounds: dict
    max_values: dict
    violations: dict

    @property
    def ok(self) -> bool:
        return all(v == 0 for v in self.violations.values())

    def rows(self) -> list[dict]:
        return [
            {"inequality": k, "bound": self.bounds[k], "max_on_event": self.max_values[k], "violations": self.violations[k]}
            for k in self.bounds
        ]


def inverse_bounds_experiment(
    spec: ProblemSpec,
    f_true: GroundTruth,
    n: int,
    m: int,
    trials: int,
    seed: int,
    D2: float | None = None,
    B: PopulationOperator | None = None,
    workers: int = 1,
) -> InequalityReport:
    """Check the four perturbation bounds and the approximation-error bound on the event ``||B_X - B_nu||_HS <= lambda_m / 2``.

    a1: ``||P_m - (P_m B_nu P_m)^+ P_m B_X P_m||_HS <= 1/2``
    a2: ``||(P_m B_X P_m)^+|| <= 2 / lambda_m``
    a3: ``||(P_m B_X P_m)^+ (P_m B_nu P_m)|| <= 2 (1 + D2)``
    a4: ``||(P_m B_X P_m)^+ B_X (I - P_m)|| <= 2 D2 + 4``
    i1: ``||I1|| <= (2 D2 + 5) R0 m^-s``
    """
    B = B if B is not None else assemble_b_nu(spec)
    Bf = B.in_family(spec.subspaces)
    lam_m = numerics.lambda_min_nonzero(Bf[:m, :m])
    if D2 is None:
        D2 = _cross_term(Bf, m)
    bounds = {
        "a1": 0.5,
        "a2": 2.0 / lam_m,
        "a3": 2.0 * (1.0 + D2),
        "a4": 2.0 * D2 + 4.0,
        "i1": (2.0 * D2 + 5.0) * f_true.declared_R0 * m ** (-f_true.declared_s),
    }
    plan = SeedPlan(seed)
    out = map_trials(partial(_event_trial, spec, Bf, lam_m, f_true.coeffs, n, m), [plan.trial(i) for i in range(trials)], workers)
    hits = [o for o in out if o["in_event"]]
    max_vals = {k: max((o[k] for o in hits), default=0.0) for k in bounds}
    # relative slack 1e-12 absorbs rounding at equality
    viol = {k: sum(o[k] > bounds[k] * (1 + 1e-12) for o in hits) for k in bounds}
    return InequalityReport(n, m, trials, len(hits), lam_m, D2, bounds, max_vals, viol)


@dataclass(frozen=True)
class TruncationEvent:
    n: int
    m: int
    R: float
    trials: int
    event_fraction: float
    joint_count: int
    allowed: float

    @property
    def joint_frequency(self) -> float:
        return self.joint_count / self.trials

    @property
    def ok(self) -> bool:
        return self.joint_frequency <= self.allowed


def truncation_event_experiment(
    spec: ProblemSpec,
    f_true: GroundTruth,
    n: int,
    m: int,
    trials: int,
    seed: int,
    R: float | None = None,
    D2: float = 0.0,
    B: PopulationOperator | None = None,
    workers: int = 1,
) -> TruncationEvent:
    """Frequency of ``{||B_X - B_nu||_HS <= lambda_m/2} and {||f_{m,N}|| > R}``.

    ``R`` defaults to :func:`choose_R`.  The frequency may not exceed
    ``max(5 exp(-N/8), 3 / trials)``.
    """
    B = B if B is not None else assemble_b_nu(spec)
    Bf = B.in_family(spec.subspaces)
    lam_m = numerics.lambda_min_nonzero(Bf[:m, :m])
    if R is None:
        R = choose_R(spec.noise_delta, lam_m, f_true.declared_R0, D2)
    plan = SeedPlan(seed)
    out = map_trials(partial(_event_trial, spec, Bf, lam_m, f_true.coeffs, n, m), [plan.trial(i) for i in range(trials)], workers)
    event = np.array([o["in_event"] for o in out])
    big = np.array([o["estimate_norm"] > R for o in out])
    allowed = max(5.0 * math.exp(-n / 8.0), 3.0 / trials)
    return TruncationEvent(n, m, float(R), trials, float(event.mean()), int(np.sum(event & big)), allowed)
