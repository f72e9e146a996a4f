"""Sign-vector packings and the Gaussian-regression KL budget behind the lower bound.

The existence statement for well-separated sign vectors is non-constructive,
so :func:`build_sign_packing` runs a randomized Gilbert-Varshamov search and
then re-verifies its output exhaustively.  Every derived function packing is
re-checked against the source condition and the separation requirement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from projlearn import numerics
from projlearn.analysis import PopulationOperator, assemble_b_nu
from projlearn.problem import ProblemSpec, source_check

DEFAULT_BUDGET = 10**6
KL_ROUTE_TOL = 1e-10


class PackingError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SignPacking:
    k: int
    vectors: np.ndarray  # shape (K, k), entries +-1

    @property
    def cardinality(self) -> int:
        return self.vectors.shape[0]

    def min_squared_distance(self) -> int:
        return int(_pairwise_sq_dist(self.vectors).min())


def _pairwise_sq_dist(vectors: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances over distinct pairs (upper triangle, flattened)."""
    v = vectors.astype(np.int64)
    K = v.shape[0]
    out = []
    for i in range(K - 1):
        out.append(np.sum((v[i + 1 :] - v[i]) ** 2, axis=1))
    return np.concatenate(out) if out else np.array([], dtype=np.int64)


def verify_sign_packing(packing: SignPacking) -> None:
    """Exhaustive rescan of the packing invariants; raises on the first failure."""
    v, k, K = packing.vectors, packing.k, packing.cardinality
    if not np.all(np.abs(v) == 1):
        raise PackingError("entries must be +-1")
    if K <= 3:
        raise PackingError(f"cardinality {K} must exceed 3")
    if not math.log(K - 1) > k / 36:
        raise PackingError(f"log(K - 1) = {math.log(K - 1):.4f} does not exceed k/36 = {k / 36:.4f}")
    for i in range(K - 1):
        d = np.sum((v[i + 1 :].astype(np.int64) - v[i]) ** 2, axis=1)
        if d.min() < k:
            j = i + 1 + int(np.argmin(d))
            raise PackingError(f"vectors {i} and {j} are at squared distance {int(d.min())} < k = {k}")


def build_sign_packing(k: int, seed: int, budget: int = DEFAULT_BUDGET) -> SignPacking:
    """Random sign vectors with pairwise squared distance >= k.

    Candidates are drawn uniformly and kept when they are far enough from
    all kept vectors, until ``ceil(exp(k/36)) + 1`` vectors are kept.
    """
    if k < 28:
        raise ValueError(f"k must be >= 28, got {k}")
    target = math.ceil(math.exp(k / 36)) + 1
    rng = np.random.default_rng(seed)
    kept = np.empty((target, k), dtype=np.int8)
    n_kept = 0
    rejected = 0
    for _ in range(budget):
        cand = (2 * rng.integers(0, 2, size=k) - 1).astype(np.int8)
        if n_kept:
            # squared distance = 4 * Hamming distance
            ham = np.count_nonzero(kept[:n_kept] != cand, axis=1)
            if 4 * ham.min() < k:
                rejected += 1
                continue
        kept[n_kept] = cand
        n_kept += 1
        if n_kept == target:
            packing = SignPacking(k, kept)
            verify_sign_packing(packing)
            return packing
    raise PackingError(
        f"retry budget of {budget} draws exhausted for k={k}: kept {n_kept}/{target}, rejected {rejected}"
    )


@dataclass(frozen=True, eq=False)
class Packing:
    epsilon: float
    s: float
    R: float
    k: int
    functions: np.ndarray  # shape (K, M), ambient coefficients
    kl_matrix: np.ndarray

    def __post_init__(self):
        if self.functions.shape[0] < 2:
            raise ValueError("a packing needs at least two functions")

    @property
    def cardinality(self) -> int:
        return self.functions.shape[0]

    def pairwise_distances(self) -> np.ndarray:
        f = self.functions
        K = f.shape[0]
        return np.array([np.linalg.norm(f[i] - f[j]) for i in range(K) for j in range(i + 1, K)])

    def to_dict(self) -> dict:
        iu = np.triu_indices(self.cardinality, 1)
        kl = self.kl_matrix[iu]
        return {
            "k": self.k,
            "K": self.cardinality,
            "epsilon": self.epsilon,
            "s": self.s,
            "R": self.R,
            "min_pairwise_distance": float(self.pairwise_distances().min()),
            "kl_max": float(kl.max()),
            "kl_mean": float(kl.mean()),
        }


def packing_dimension(s: float, R: float, epsilon: float) -> int:
    """``k = floor((R / epsilon)^(1/s) / 2)``, robust to rounding at integers."""
    return int(math.floor(0.5 * (R / epsilon) ** (1.0 / s) + 1e-9))


def kl_matrix(spec: ProblemSpec, functions: np.ndarray, B: PopulationOperator | None = None) -> np.ndarray:
    """Pairwise KL divergences, cross-checked between the quadratic-form and square-root routes."""
    delta = spec.noise_delta
    if delta <= 0:
        raise ValueError("KL divergence needs a positive noise level")
    B = B if B is not None else assemble_b_nu(spec)
    f = np.asarray(functions, dtype=float)
    gram = f @ B.matrix @ f.T
    diag = np.diag(gram)
    quad = (diag[:, None] + diag[None, :] - 2.0 * gram) / (2.0 * delta**2)
    root = f @ numerics.sqrt_psd(B.matrix)
    sq = np.sum((root[:, None, :] - root[None, :, :]) ** 2, axis=2) / (2.0 * delta**2)
    gap = float(np.max(np.abs(quad - sq)))
    if gap > KL_ROUTE_TOL:
        raise ArithmeticError(f"KL routes disagree by {gap:.2e}")
    out = 0.5 * (sq + sq.T)
    np.fill_diagonal(out, 0.0)
    return np.clip(out, 0.0, None)


def kl_divergence(spec: ProblemSpec, f1, f2, B: PopulationOperator | None = None) -> float:
    """``||B^(1/2)(f1 - f2)||^2 / (2 delta^2)`` for the Gaussian regression models."""
    if spec.noise_delta <= 0:
        raise ValueError("KL divergence is undefined for delta = 0")
    B = B if B is not None else assemble_b_nu(spec)
    d = np.asarray(f1, dtype=float) - np.asarray(f2, dtype=float)
    quad = float(d @ B.matrix @ d) / (2.0 * spec.noise_delta**2)
    root = float(np.sum((numerics.sqrt_psd(B.matrix) @ d) ** 2)) / (2.0 * spec.noise_delta**2)
    if abs(quad - root) > KL_ROUTE_TOL * max(1.0, abs(quad)):
        raise ArithmeticError(f"KL routes disagree: {quad!r} vs {root!r}")
    return max(quad, 0.0)


def build_function_packing(
    spec: ProblemSpec, s: float, R: float, epsilon: float, seed: int, B: PopulationOperator | None = None
) -> Packing:
    """``f_i = (epsilon / sqrt(k)) sum_{l=k+1}^{2k} pi_i^(l-k) q_l`` on the family basis."""
    if s <= 0 or R <= 0:
        raise ValueError("s and R must be positive")
    eps0 = 56.0 ** (-s) * R
    if not 0 < epsilon <= eps0 * (1 + 1e-12):
        raise ValueError(f"epsilon must lie in (0, 56^-s R] = (0, {eps0:.6g}], got {epsilon}")
    k = packing_dimension(s, R, epsilon)
    M = spec.ambient_dim
    if 2 * k > M:
        raise ValueError(f"packing needs 2k = {2 * k} <= ambient dimension {M}")
    signs = build_sign_packing(k, seed)
    K = signs.cardinality
    coeffs = np.zeros((K, M))
    coeffs[:, k : 2 * k] = epsilon / math.sqrt(k) * signs.vectors
    funcs = np.array([spec.subspaces.from_family(c) for c in coeffs])
    for i, f in enumerate(funcs):
        chk = source_check(spec.subspaces, f, s, R)
        if not chk.ok:
            raise PackingError(f"function {i} leaves the source set at m={chk.violating_m} (margin {chk.margin:.3e})")
    min_dist = float(np.min([np.linalg.norm(funcs[i] - funcs[j]) for i in range(K) for j in range(i + 1, K)]))
    if min_dist < epsilon * (1 - 1e-12):
        raise PackingError(f"separation {min_dist:.6g} below epsilon {epsilon:.6g}")
    return Packing(epsilon, s, R, k, funcs, kl_matrix(spec, funcs, B))


def kl_bound_constant(t: float, D3: float) -> float:
    return 2.0 ** (t + 1) * D3


def verify_packing_properties(spec: ProblemSpec, packing: Packing, t: float, D3: float) -> dict:
    """Margins of the three packing properties (nonnegative means satisfied).

    separation / source: pairwise distance >= epsilon and source membership.
    kl: ``max KL <= 2^(t+1) D3 R^2 delta^-2 (epsilon/R)^(2 + t/s)``.  ``D3``
    must bound the diagonal ``<q_l, B q_l> <= D3 l^-t`` on the packing block.
    cardinality: ``log(K - 1) >= (R/epsilon)^(1/s) / 72``.
    """
    eps, s, R, delta = packing.epsilon, packing.s, packing.R, spec.noise_delta
    source_margin = min(source_check(spec.subspaces, f, s, R).margin for f in packing.functions)
    sep_margin = float(packing.pairwise_distances().min() - eps)
    C = kl_bound_constant(t, D3)
    kl_bound = C * R**2 * delta ** (-2) * (eps / R) ** (2 + t / s)
    kl_max = float(packing.kl_matrix.max())
    card_margin = math.log(packing.cardinality - 1) - (R / eps) ** (1.0 / s) / 72.0
    return {
        "separation_margin": sep_margin,
        "source_margin": float(source_margin),
        "kl_max": kl_max,
        "kl_bound": kl_bound,
        "kl_margin": kl_bound - kl_max,
        "kl_constant": C,
        "cardinality_margin": card_margin,
        "ok": bool(sep_margin >= -1e-12 * eps and source_margin >= 0 and kl_bound >= kl_max and card_margin >= 0),
    }


def fano_threshold(
    s: float, t: float, R: float, delta: float, epsilon: float, D3: float = 1.0, variant: str = "budget"
) -> int:
    """Sample size up to which the packing's KL budget stays below ``log(K-1) / 8``.

    ``budget``: ``floor(1 / (8 C_t R^2 delta^-2 (epsilon/R)^(2 + t/s)))``, which
    makes ``N * max KL <= 1/8`` under the pairwise KL bound.
    ``literal``: the same with exponent ``2 + (t+1)/s``, which carries an
    extra ``log(K-1)`` factor that the pairwise bound does not supply.
    ``C_t = 2^(t+1) D3``.
    """
    if min(s, t, R, delta, epsilon, D3) <= 0:
        raise ValueError("all parameters must be positive")
    if variant == "budget":
        expo = 2 + t / s
    elif variant == "literal":
        expo = 2 + (t + 1) / s
    else:
        raise ValueError(f"unknown variant {variant!r}")
    value = 1.0 / (8.0 * kl_bound_constant(t, D3) * R**2 * delta ** (-2) * (epsilon / R) ** expo)
    n = int(math.floor(value * (1 + 1e-12)))
    if n < 1:
        raise ValueError(f"parameters give N(epsilon) = {value:.3g} < 1")
    return n


def kl_budget(packing: Packing, n: int) -> dict:
    """KL budget at sample size ``n``, both worst-pair and averaged against the last function."""
    K = packing.cardinality
    log_k = math.log(K - 1)
    worst = n * float(packing.kl_matrix.max())
    avg = n * float(np.mean(packing.kl_matrix[:-1, -1]))
    return {
        "n": n,
        "n_kl_max": worst,
        "n_kl_mean_vs_last": avg,
        "allowance": log_k / 8.0,
        "omega": avg / log_k,
        "ok": bool(worst <= log_k / 8.0),
    }
