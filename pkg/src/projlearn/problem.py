"""Finite ambient model of the inverse problem.

The solution space is truncated to ``M`` coefficients against an orthonormal
basis ``e_1..e_M``.  The forward operator sends ``e_j`` to a function on
``[0, 1]`` expressed in the cosine system

    phi_0(x) = 1,   phi_k(x) = sqrt(2) cos(pi k x),  k >= 1,

which is orthonormal in L2 of the uniform measure.  A forward operator is
therefore an ``M x M`` matrix ``W`` whose row ``j`` holds the cosine
coefficients of ``A e_j``; the diagonal kind is ``W = diag(a)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy import optimize

from projlearn import numerics

KERNEL_GRID_SIZE = 1024
MIN_SINGULAR = 1e-14
SOURCE_TOL = 1e-12


def cosine_features(x, n_features: int) -> np.ndarray:
    """Matrix ``F[n, k] = phi_k(x_n)`` for ``k = 0..n_features-1``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    k = np.arange(n_features)
    feats = np.sqrt(2.0) * np.cos(np.pi * np.outer(x, k))
    feats[:, 0] = 1.0
    return feats


# ---------------------------------------------------------------------------
# forward operator
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForwardOperator:
    """Forward map on the ambient truncation.

    Construction rescales the operator so that its norm does not exceed one.
    ``scale`` records the factor that was applied.
    """

    kind: str
    singulars: np.ndarray | None = None
    matrix: np.ndarray | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind == "diagonal_cosine":
            if self.singulars is None:
                raise ValueError("diagonal_cosine operator needs singulars")
            a = np.asarray(self.singulars, dtype=float).copy()
            if a.ndim != 1 or a.size < 2:
                raise ValueError("singulars must be a vector of length >= 2")
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError("singulars must be finite and nonnegative")
            if np.any(np.diff(a) > 0):
                raise ValueError("singulars must be nonincreasing")
            norm = float(a[0])
            scale = 1.0 / norm if norm > 1.0 else 1.0
            a *= scale
            a.setflags(write=False)
            object.__setattr__(self, "singulars", a)
        elif self.kind == "dense_matrix":
            if self.matrix is None:
                raise ValueError("dense_matrix operator needs a matrix")
            w = np.array(self.matrix, dtype=float)
            if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 2:
                raise ValueError(f"dense matrix must be square with size >= 2, got {w.shape}")
            norm = numerics.op_norm(w)
            scale = 1.0 / norm if norm > 1.0 else 1.0
            w *= scale
            w.setflags(write=False)
            object.__setattr__(self, "matrix", w)
        else:
            raise ValueError(f"unknown forward operator kind {self.kind!r}")
        object.__setattr__(self, "scale", self.scale * scale)

    @classmethod
    def power_law(cls, dim: int, t: float) -> "ForwardOperator":
        """Diagonal operator with ``a_j = j^(-t/2)``, so that ``B_nu = diag(j^-t)`` under the uniform design."""
        j = np.arange(1, dim + 1, dtype=float)
        return cls("diagonal_cosine", singulars=j ** (-t / 2.0))

    @property
    def dim(self) -> int:
        return self.singulars.size if self.kind == "diagonal_cosine" else self.matrix.shape[0]

    def as_matrix(self) -> np.ndarray:
        if self.kind == "diagonal_cosine":
            return np.diag(self.singulars)
        return np.array(self.matrix)

    def min_singular(self) -> float:
        if self.kind == "diagonal_cosine":
            return float(self.singulars[-1])
        return float(numerics.svd(self.matrix).singulars[-1])

    def to_dict(self) -> dict:
        if self.kind == "diagonal_cosine":
            return {"kind": self.kind, "singulars": self.singulars.tolist()}
        return {"kind": self.kind, "matrix": self.matrix.tolist()}


# ---------------------------------------------------------------------------
# design measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DesignMeasure:
    """Sampling distribution on ``[0, 1]``.

    ``density01`` takes ascending power-basis coefficients of a polynomial
    that must be strictly positive on the interval; it is normalized here.
    """

    kind: str = "uniform01"
    coefficients: tuple = ()

    def __post_init__(self):
        if self.kind == "uniform01":
            object.__setattr__(self, "coefficients", (1.0,))
            return
        if self.kind != "density01":
            raise ValueError(f"unknown design kind {self.kind!r}")
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim != 1 or c.size == 0 or not np.all(np.isfinite(c)):
            raise ValueError("density coefficients must be a non-empty finite vector")
        poly = Polynomial(c)
        integral = poly.integ()(1.0) - poly.integ()(0.0)
        if integral <= 0:
            raise ValueError("density must have positive integral on [0, 1]")
        poly = poly / integral
        if _poly_min_on_unit(poly) <= 0.0:
            raise ValueError("density must be strictly positive on [0, 1]")
        object.__setattr__(self, "coefficients", tuple(float(v) for v in poly.coef))

    @property
    def polynomial(self) -> Polynomial:
        return Polynomial(self.coefficients)

    def pdf(self, x) -> np.ndarray:
        return self.polynomial(np.asarray(x, dtype=float))

    def cdf(self, x) -> np.ndarray:
        antider = self.polynomial.integ()
        return antider(np.asarray(x, dtype=float)) - antider(0.0)

    def mean(self) -> float:
        first = (Polynomial([0.0, 1.0]) * self.polynomial).integ()
        return float(first(1.0) - first(0.0))

    def inverse_cdf(self, u, tol: float = 1e-12) -> np.ndarray:
        """Vectorized bisection; exact for the uniform design."""
        u = np.asarray(u, dtype=float)
        if self.kind == "uniform01":
            return u.copy()
        lo = np.zeros_like(u)
        hi = np.ones_like(u)
        cdf = self.polynomial.integ()
        base = cdf(0.0)
        n_iter = int(np.ceil(np.log2(1.0 / tol))) + 1
        for _ in range(n_iter):
            mid = 0.5 * (lo + hi)
            below = (cdf(mid) - base) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def to_dict(self) -> dict:
        if self.kind == "uniform01":
            return {"kind": "uniform01"}
        return {"kind": self.kind, "coefficients": list(self.coefficients)}


def _poly_min_on_unit(poly: Polynomial) -> float:
    candidates = [0.0, 1.0]
    deriv = poly.deriv()
    if deriv.degree() > 0:
        for r in deriv.roots():
            if abs(r.imag) < 1e-12 and 0.0 <= r.real <= 1.0:
                candidates.append(float(r.real))
    return float(min(poly(np.array(candidates))))


# ---------------------------------------------------------------------------
# subspaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SubspaceFamily:
    """Nested subspaces ``V_m = span(q_1..q_m)``.

    ``coordinate`` uses the ambient basis itself; ``rotated`` uses the
    columns of an orthogonal matrix (given, or drawn from ``seed``).
    """

    kind: str = "coordinate"
    rotation: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind == "coordinate":
            return
        if self.kind != "rotated":
            raise ValueError(f"unknown subspace family kind {self.kind!r}")
        if self.rotation is None:
            raise ValueError("rotated family needs a rotation matrix (use SubspaceFamily.random_rotation)")
        q = np.array(self.rotation, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("rotation must be square")
        err = float(np.max(np.abs(q.T @ q - np.eye(q.shape[0]))))
        if err > 1e-10:
            raise ValueError(f"rotation is not orthogonal (max deviation {err:.2e})")
        q.setflags(write=False)
        object.__setattr__(self, "rotation", q)

    @classmethod
    def random_rotation(cls, dim: int, seed: int) -> "SubspaceFamily":
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
        q = q * np.sign(np.diag(r))
        return cls("rotated", rotation=q, seed=seed)

    def basis(self, dim: int) -> np.ndarray:
        if self.kind == "coordinate":
            return np.eye(dim)
        self._check_dim(dim)
        return np.array(self.rotation)

    def _check_dim(self, dim: int):
        if self.kind == "rotated" and self.rotation.shape[0] != dim:
            raise ValueError(f"rotation has size {self.rotation.shape[0]}, ambient dimension is {dim}")

    def to_family(self, v) -> np.ndarray:
        """Coordinates of an ambient vector (or rows of a matrix) in the family basis."""
        v = np.asarray(v, dtype=float)
        if self.kind == "coordinate":
            return v.copy()
        self._check_dim(v.shape[-1])
        return v @ self.rotation

    def from_family(self, c) -> np.ndarray:
        """Ambient vector from (possibly leading-only) family coordinates."""
        c = np.asarray(c, dtype=float)
        if self.kind == "coordinate":
            return c.copy()
        return self.rotation[:, : c.shape[-1]] @ c

    def leading_columns(self, mat, m: int) -> np.ndarray:
        """``mat @ Q[:, :m]`` without materializing ``Q`` for the coordinate family."""
        mat = np.asarray(mat, dtype=float)
        if self.kind == "coordinate":
            return mat[:, :m].copy()
        return mat @ self.rotation[:, :m]

    def to_dict(self) -> dict:
        if self.kind == "coordinate":
            return {"kind": "coordinate"}
        if self.seed is not None:
            return {"kind": "rotated", "seed": self.seed}
        return {"kind": "rotated", "rotation": self.rotation.tolist()}


# ---------------------------------------------------------------------------
# problem
# ---------------------------------------------------------------------------


def _kernel_diagonal_sup(W: np.ndarray, dim: int) -> float:
    """``max k(x, x)`` over a 1024-point grid, refined locally around the grid maxima."""

    def diag(x):
        rows = cosine_features(x, dim) @ W.T
        return np.sum(rows**2, axis=1)

    grid = np.linspace(0.0, 1.0, KERNEL_GRID_SIZE)
    vals = diag(grid)
    best = float(vals.max())
    if best <= 0:
        return best
    padded = np.concatenate([[-np.inf], vals, [-np.inf]])
    peaks = np.nonzero((vals >= padded[:-2]) & (vals >= padded[2:]) & (vals >= 0.9 * best))[0]
    for i in peaks:
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        res = optimize.minimize_scalar(lambda x: -diag(x)[0], bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Everything needed to sample data and assemble operators.

    kernel_normalization
        ``"sup"`` rescales the features so that ``max k(x, x)`` over
        ``[0, 1]`` equals one (1024-point grid plus local refinement); ``"none"`` keeps the
        operator as given (after the ``||A|| <= 1`` rescale).
    require_injective
        Reject operators with a singular value below ``1e-14``.
    """

    ambient_dim: int
    forward: ForwardOperator
    design: DesignMeasure = field(default_factory=DesignMeasure)
    noise_delta: float = 0.0
    subspaces: SubspaceFamily = field(default_factory=SubspaceFamily)
    kernel_normalization: str = "sup"
    require_injective: bool = True
    kernel_scale: float = field(init=False, default=1.0)

    def __post_init__(self):
        if int(self.ambient_dim) != self.ambient_dim or self.ambient_dim < 2:
            raise ValueError(f"ambient_dim must be an integer >= 2, got {self.ambient_dim}")
        if self.forward.dim != self.ambient_dim:
            raise ValueError(f"forward operator has size {self.forward.dim}, ambient_dim is {self.ambient_dim}")
        self.subspaces._check_dim(self.ambient_dim)
        if not np.isfinite(self.noise_delta) or self.noise_delta < 0:
            raise ValueError(f"noise_delta must be finite and >= 0, got {self.noise_delta}")
        if self.require_injective and self.forward.min_singular() < MIN_SINGULAR:
            raise ValueError("forward operator is not injective on the ambient truncation")
        if self.kernel_normalization == "sup":
            sup = _kernel_diagonal_sup(self.forward.as_matrix(), self.ambient_dim)
            if sup > 0:
                object.__setattr__(self, "kernel_scale", 1.0 / np.sqrt(sup))
        elif self.kernel_normalization != "none":
            raise ValueError(f"kernel_normalization must be 'sup' or 'none', got {self.kernel_normalization!r}")

    @property
    def dim(self) -> int:
        return self.ambient_dim

    def operator_matrix(self) -> np.ndarray:
        """Cosine-coefficient matrix of the (normalized) forward operator."""
        return self.kernel_scale * self.forward.as_matrix()

    def with_delta(self, delta: float) -> "ProblemSpec":
        return ProblemSpec(
            self.ambient_dim, self.forward, self.design, delta, self.subspaces,
            self.kernel_normalization, self.require_injective,
        )

    def to_dict(self) -> dict:
        return {
            "ambient_dim": self.ambient_dim,
            "noise_delta": self.noise_delta,
            "forward": self.forward.to_dict(),
            "design": self.design.to_dict(),
            "subspaces": self.subspaces.to_dict(),
            "kernel_normalization": self.kernel_normalization,
        }


def evaluation_matrix(spec: ProblemSpec, x) -> np.ndarray:
    """``E[n, j] = (A e_j)(x_n)`` for every point in ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise ValueError("design points must be a 1-D array")
    if np.any((x < 0.0) | (x > 1.0)) or not np.all(np.isfinite(x)):
        raise ValueError("design points must lie in [0, 1]")
    feats = cosine_features(x, spec.ambient_dim)
    if spec.forward.kind == "diagonal_cosine":
        return feats * (spec.kernel_scale * spec.forward.singulars)
    return feats @ spec.operator_matrix().T


def eval_row(spec: ProblemSpec, x: float) -> np.ndarray:
    return evaluation_matrix(spec, [x])[0]


def kernel_eval(spec: ProblemSpec, x: float, x2: float) -> float:
    rows = evaluation_matrix(spec, [x, x2])
    return float(rows[0] @ rows[1])


def forward_apply(spec: ProblemSpec, coeffs, x) -> np.ndarray:
    """Values of ``A f`` at the points ``x``."""
    return evaluation_matrix(spec, x) @ np.asarray(coeffs, dtype=float)


# ---------------------------------------------------------------------------
# projections and source sets
# ---------------------------------------------------------------------------


def project(family: SubspaceFamily, v, m: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    dim = v.shape[-1]
    if not 0 <= m <= dim:
        raise ValueError(f"m must lie in [0, {dim}], got {m}")
    c = family.to_family(v)
    c[m:] = 0.0
    return family.from_family(c)


def tail_norms(family: SubspaceFamily, f) -> np.ndarray:
    """``||(I - P_m) f||`` for ``m = 0..M``."""
    c = family.to_family(f)
    sq = np.concatenate([np.cumsum((c**2)[::-1])[::-1], [0.0]])
    return np.sqrt(sq)


class SourceCheck(NamedTuple):
    ok: bool
    margin: float
    worst_m: int
    violating_m: int | None


def source_check(family: SubspaceFamily, f, s: float, R: float) -> SourceCheck:
    """Membership of ``f`` in ``{||(I - P_m) f|| <= R (m+1)^-s for m = 0..M}``.

    ``margin`` is the smallest slack ``R (m+1)^-s - ||(I-P_m) f||``; a
    relative tolerance of 1e-12 absorbs rounding at equality.
    """
    if s <= 0 or R <= 0:
        raise ValueError("s and R must be positive")
    tails = tail_norms(family, f)
    m = np.arange(tails.size)
    bound = R * (m + 1.0) ** (-s)
    slack = bound - tails
    worst = int(np.argmin(slack))
    bad = np.nonzero(slack < -SOURCE_TOL * np.maximum(bound, tails))[0]
    violating = int(bad[0]) if bad.size else None
    return SourceCheck(violating is None, float(slack[worst]), worst, violating)


def smallest_source_radius(family: SubspaceFamily, f, s: float) -> float:
    """``max_m (m+1)^s ||(I - P_m) f||`` by brute force over ``m = 0..M``."""
    tails = tail_norms(family, f)
    return float(np.max((np.arange(tails.size) + 1.0) ** s * tails))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    coeffs: np.ndarray
    declared_s: float
    declared_R0: float

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def make_ground_truth(
    family: SubspaceFamily,
    dim: int,
    kind: str,
    s: float,
    margin: float = 0.01,
    m: int | None = None,
    values=None,
) -> GroundTruth:
    """Build a ground truth together with its brute-force source radius.

    polynomial_decay
        family coefficients ``c_j = j^-(s + 1/2 + margin)``, whose tails decay
        like ``m^-(s + margin)``.
    sparse_in_V_m
        ``values`` (default ``1/j``) on the first ``m`` family coordinates.
    """
    if s <= 0:
        raise ValueError(f"s must be positive, got {s}")
    if kind == "polynomial_decay":
        if margin < 0:
            raise ValueError("margin must be nonnegative")
        j = np.arange(1, dim + 1, dtype=float)
        c = j ** (-(s + 0.5 + margin))
    elif kind == "sparse_in_V_m":
        if m is None or not 1 <= m <= dim:
            raise ValueError(f"sparse_in_V_m needs 1 <= m <= {dim}")
        c = np.zeros(dim)
        c[:m] = 1.0 / np.arange(1, m + 1) if values is None else np.asarray(values, dtype=float)
    else:
        raise ValueError(f"unknown ground truth kind {kind!r}")
    f = family.from_family(c)
    R0 = smallest_source_radius(family, f, s)
    truth = GroundTruth(f, s, R0)
    check = source_check(family, f, s, R0)
    if not check.ok:
        raise ArithmeticError(f"constructed ground truth fails its own source check at m={check.violating_m}")
    return truth
