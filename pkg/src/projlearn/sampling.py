"""Seeded randomness: design draws, Gaussian noise and dataset assembly.

Every trial owns a 64-bit seed obtained by mixing ``(master_seed,
trial_index)`` with the SplitMix64 finalizer.  Two child streams are derived
from it, one for the design points and one for the noise, so the design of a
trial does not depend on the noise level or on how many noise values are
drawn.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from projlearn.problem import DesignMeasure, GroundTruth, ProblemSpec, forward_apply

_MASK64 = (1 << 64) - 1
_DESIGN_STREAM = 0
_NOISE_STREAM = 1


def splitmix64(x: int) -> int:
    """SplitMix64 output function (Steele, Lea & Flood 2014)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class SeedPlan:
    master_seed: int
    trial_index: int = 0

    def __post_init__(self):
        if self.trial_index < 0:
            raise ValueError("trial_index must be nonnegative")

    @property
    def trial_seed(self) -> int:
        return splitmix64(splitmix64(self.master_seed & _MASK64) ^ self.trial_index)

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.trial_seed, stream])))

    def trial(self, index: int) -> "SeedPlan":
        return SeedPlan(self.master_seed, index)


def _as_plan(seed) -> SeedPlan:
    if isinstance(seed, SeedPlan):
        return seed
    return SeedPlan(int(seed), 0)


def draw_design(design: DesignMeasure, n: int, seed) -> np.ndarray:
    """``n`` i.i.d. points from the design measure (inverse-CDF sampling)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    u = _as_plan(seed).rng(_DESIGN_STREAM).random(n)
    return design.inverse_cdf(u)


def draw_noise(n: int, seed) -> np.ndarray:
    return _as_plan(seed).rng(_NOISE_STREAM).standard_normal(n)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design points and noisy observations.

    ``seed`` is set for synthetic data and lets the exact noise vector be
    regenerated; it is ``None`` for externally supplied data.
    """

    points: np.ndarray
    observations: np.ndarray
    noise_delta: float = 0.0
    seed: SeedPlan | None = None

    def __post_init__(self):
        x = np.array(self.points, dtype=float).ravel()
        y = np.array(self.observations, dtype=float).ravel()
        if x.size < 1:
            raise ValueError("dataset needs at least one observation")
        if x.shape != y.shape:
            raise ValueError(f"points and observations differ in length: {x.size} vs {y.size}")
        if np.any((x < 0) | (x > 1)):
            raise ValueError("design points must lie in [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "observations", y)

    @property
    def n(self) -> int:
        return self.points.size

    def noise(self) -> np.ndarray:
        """The standard-normal noise vector used by :func:`synthesize`."""
        if self.seed is None:
            raise ValueError("dataset is not synthetic: the noise vector cannot be recovered")
        return draw_noise(self.n, self.seed)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y"])
            for xv, yv in zip(self.points, self.observations):
                writer.writerow([f"{xv:.17g}", f"{yv:.17g}"])
        return path

    @classmethod
    def from_csv(cls, path, noise_delta: float = 0.0) -> "Dataset":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], noise_delta)


def synthesize(spec: ProblemSpec, f_true, n: int, seed) -> Dataset:
    """``y_n = (A f)(x_n) + delta * eps_n`` with i.i.d. standard normal noise."""
    plan = _as_plan(seed)
    coeffs = f_true.coeffs if isinstance(f_true, GroundTruth) else np.asarray(f_true, dtype=float)
    x = draw_design(spec.design, n, plan)
    y = forward_apply(spec, coeffs, x)
    if spec.noise_delta > 0:
        y = y + spec.noise_delta * draw_noise(n, plan)
    return Dataset(x, y, spec.noise_delta, plan)
