"""Subject-level empirical quantile functions and quantile-based moments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import DegenerateSampleError, OutOfRangeError, ValidationError

# variance below this makes skewness/kurtosis undefined
VARIANCE_FLOOR = 1e-12
# slack when snapping (m+1)p onto an integer order-statistic index
_INDEX_SNAP = 1e-9


@dataclass(frozen=True)
class SampleSet:
    subject_id: Hashable
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size < 2:
            raise DegenerateSampleError(
                f"subject {self.subject_id!r} has {values.size} value(s); at least 2 are required"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError(f"subject {self.subject_id!r} has non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class EmpiricalQuantileFunction:
    """Order statistics of one subject placed at p_j = j/(m+1), j = 1..m."""

    subject_id: Hashable
    grid: np.ndarray
    values: np.ndarray

    @property
    def m(self) -> int:
        return self.values.size

    @property
    def support(self) -> tuple[float, float]:
        """Estimable probability range [1/(m+1), m/(m+1)]."""
        return float(self.grid[0]), float(self.grid[-1])


@dataclass(frozen=True)
class MomentSummary:
    mean: float
    variance: float
    skewness: Optional[float]
    kurtosis: Optional[float]

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))


def eqf_grid(m: int) -> np.ndarray:
    return np.arange(1, m + 1, dtype=float) / (m + 1)


def build_eqf(samples: SampleSet) -> EmpiricalQuantileFunction:
    if not isinstance(samples, SampleSet):
        samples = SampleSet("anonymous", samples)
    values = np.sort(samples.values, kind="stable")
    return EmpiricalQuantileFunction(samples.subject_id, eqf_grid(values.size), values)


def _interpolate(values: np.ndarray, p: np.ndarray) -> np.ndarray:
    m = values.size
    lo, hi = 1.0 / (m + 1), m / (m + 1.0)
    bad = (p < lo - 1e-14) | (p > hi + 1e-14)
    if np.any(bad):
        first = float(np.atleast_1d(p)[np.atleast_1d(bad)][0])
        raise OutOfRangeError(
            f"p={first!r} is outside the estimable range [{lo!r}, {hi!r}] for m={m}"
        )
    pos = (m + 1) * p
    k = np.floor(pos)
    near = np.abs(pos - np.round(pos)) < _INDEX_SNAP
    k = np.where(near, np.round(pos), k)
    w = np.where(near, 0.0, pos - k)
    k = np.clip(k.astype(np.int64), 1, m)
    upper = np.minimum(k + 1, m)
    return (1.0 - w) * values[k - 1] + w * values[upper - 1]


def eval_eqf(q: EmpiricalQuantileFunction, p: float) -> float:
    """Linear interpolation across order statistics.

    With (m+1)p = [(m+1)p] + w the value is (1-w) Y_([(m+1)p]) + w Y_([(m+1)p]+1).
    Probabilities outside [1/(m+1), m/(m+1)] raise OutOfRangeError; nothing is
    extrapolated.
    """
    return float(_interpolate(q.values, np.asarray([p], dtype=float))[0])


def resample_to_grid(q: EmpiricalQuantileFunction, grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    return _interpolate(q.values, grid)


def modeling_delta(sample_sizes: Sequence[int]) -> float:
    """delta = max_i 1/(m_i+1), the most extreme quantile every subject supports."""
    return max(1.0 / (int(m) + 1) for m in sample_sizes)


def reference_grid(delta: float, size: int = 1024) -> np.ndarray:
    """`size` equispaced probabilities covering [delta, 1 - delta] inclusive."""
    if not 0.0 < delta < 0.5:
        raise ValidationError(f"delta must lie in (0, 0.5), got {delta!r}")
    grid = delta + (1.0 - 2.0 * delta) * np.arange(size) / (size - 1)
    grid[0], grid[-1] = delta, 1.0 - delta
    return grid


def trapezoid_weights(grid: np.ndarray, normalize: bool = True) -> np.ndarray:
    """Trapezoid-rule weights on `grid`.

    With ``normalize=True`` the weights sum to one, i.e. integrals are taken
    against the uniform probability measure on [grid[0], grid[-1]].
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        return np.ones(grid.size)
    h = np.diff(grid)
    w = np.zeros(grid.size)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    if normalize:
        w /= w.sum()
    return w


def moments_of_qf(values: np.ndarray, grid: Optional[np.ndarray] = None) -> MomentSummary:
    """Mean, variance, skewness and kurtosis of the distribution with quantile function `values`.

    Integrals over p use the normalized trapezoid rule on `grid` (equispaced
    on (0, 1) when omitted).
    """
    values = np.asarray(values, dtype=float)
    if values.size < 4:
        raise ValidationError("moments need at least 4 grid points")
    if grid is None:
        grid = eqf_grid(values.size)
    w = trapezoid_weights(grid)
    mean = float(w @ values)
    dev = values - mean
    var = float(w @ dev**2)
    if var < VARIANCE_FLOOR:
        return MomentSummary(mean, max(var, 0.0), None, None)
    skew = float(w @ dev**3) / var**1.5
    kurt = float(w @ dev**4) / var**2
    return MomentSummary(mean, var, skew, kurt)


def sample_moments(values: np.ndarray) -> MomentSummary:
    """Plain moments of raw measurements (population normalization)."""
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    dev = values - mean
    var = float(np.mean(dev**2))
    if var < VARIANCE_FLOOR:
        return MomentSummary(mean, var, None, None)
    return MomentSummary(mean, var, float(np.mean(dev**3)) / var**1.5, float(np.mean(dev**4)) / var**2)
