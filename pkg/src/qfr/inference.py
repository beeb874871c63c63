"""Posterior summaries in the data space: bands, SimBaS, moments, scores, densities."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .eqf import VARIANCE_FLOOR, trapezoid_weights
from .errors import ConfigError, OutOfRangeError

log = logging.getLogger(__name__)


@dataclass
class FunctionalPosterior:
    draws: np.ndarray  # M x A x J
    grid: np.ndarray

    @property
    def M(self) -> int:
        return self.draws.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid)

    def predict(self, X_row) -> np.ndarray:
        """Draws of the predicted quantile function X^T beta(p), shape M x J."""
        x = np.asarray(X_row, dtype=float)
        if x.size != self.draws.shape[1]:
            raise ConfigError(f"covariate row has {x.size} entries, model has {self.draws.shape[1]}")
        return np.einsum("a,maj->mj", x, self.draws)


class IdentityBasis:
    """Pointwise 'basis' for methods that model each grid probability separately."""

    is_identity = True

    def __init__(self, grid: np.ndarray):
        self.grid = np.asarray(grid, dtype=float)

    @property
    def K(self) -> int:
        return self.grid.size

    def evaluate(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if np.any(p < self.grid[0] - 1e-12) or np.any(p > self.grid[-1] + 1e-12):
            raise OutOfRangeError("probabilities outside the modeled grid")
        eye = np.eye(self.grid.size)
        return np.vstack([np.interp(p, self.grid, e) for e in eye])


def to_data_space(fit, basis, grid: Optional[np.ndarray] = None) -> FunctionalPosterior:
    """beta_a^(m)(p) = sum_k B_ak^(m) psi_k(p) on `grid` (basis grid when omitted)."""
    grid = np.asarray(basis.grid if grid is None else grid, dtype=float)
    B = fit.B if hasattr(fit, "B") else np.asarray(fit, dtype=float)
    if getattr(basis, "is_identity", False) and grid.shape == basis.grid.shape and np.allclose(grid, basis.grid):
        return FunctionalPosterior(B.copy(), grid)
    psi = basis.evaluate(grid)
    return FunctionalPosterior(B @ psi, grid)


@dataclass
class BandSet:
    alpha: float
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    pointwise_lower: np.ndarray
    pointwise_upper: np.ndarray
    q: float
    excluded: int = 0
    widened: int = 0


def _standardized_max(draws: np.ndarray):
    mean = draws.mean(axis=0)
    sd = draws.std(axis=0, ddof=1) if draws.shape[0] > 1 else np.zeros_like(mean)
    ok = sd > 0
    if ok.any():
        Z = np.max(np.abs(draws[:, ok] - mean[ok]) / sd[ok], axis=1)
    else:
        Z = np.zeros(draws.shape[0])
    return mean, sd, ok, Z


def joint_bands(fp: FunctionalPosterior, a: int, alpha: float = 0.05) -> BandSet:
    """Simultaneous band mean +/- q_(1-alpha) SD with q from the max standardized deviation."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    d = fp.draws[:, a, :]
    if d.shape[0] < 100:
        warnings.warn(f"only {d.shape[0]} draws; joint bands are unreliable below 100", RuntimeWarning)
    mean, sd, ok, Z = _standardized_max(d)
    excluded = int((~ok).sum())
    if excluded and ok.any():
        warnings.warn(f"{excluded} grid points with zero posterior SD excluded from the band maximum",
                      RuntimeWarning)
    q = float(np.quantile(Z, 1.0 - alpha))
    pl, pu = np.quantile(d, [alpha / 2.0, 1.0 - alpha / 2.0], axis=0)
    lower, upper = mean - q * sd, mean + q * sd
    # skewed or very few draws can push a pointwise quantile past mean +/- q SD
    widened = int(np.sum((pl < lower) | (pu > upper)))
    if widened:
        log.debug("joint band widened at %d grid points to contain the pointwise band", widened)
    return BandSet(alpha, mean, sd, np.minimum(lower, pl), np.maximum(upper, pu), pl, pu, q, excluded, widened)


def simbas(fp: FunctionalPosterior, a: int) -> np.ndarray:
    """Smallest alpha at which each p leaves zero outside the joint band; values in [1/M, 1]."""
    d = fp.draws[:, a, :]
    M = d.shape[0]
    mean, sd, ok, Z = _standardized_max(d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ok, np.abs(mean) / np.where(ok, sd, 1.0), np.where(mean == 0, 0.0, np.inf))
    p = (Z[None, :] >= t[:, None]).mean(axis=1)
    return np.clip(p, 1.0 / M, 1.0)


def gbpv(curve: np.ndarray) -> float:
    return float(np.min(curve))


@dataclass
class MomentDraws:
    mean: np.ndarray
    variance: np.ndarray
    skewness: np.ndarray  # NaN where undefined
    kurtosis: np.ndarray
    excluded: int = 0

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)

    def get(self, name: str) -> np.ndarray:
        return {"mu": self.mean, "mean": self.mean, "sigma": self.sd, "sd": self.sd,
                "variance": self.variance, "xi": self.skewness, "skewness": self.skewness,
                "phi": self.kurtosis, "kurtosis": self.kurtosis}[name]


def moments_from_quantiles(qdraws: np.ndarray, grid: np.ndarray) -> MomentDraws:
    """Quadrature moments of every row of an M x J matrix of quantile functions."""
    w = trapezoid_weights(grid)
    mean = qdraws @ w
    dev = qdraws - mean[:, None]
    var = (dev**2) @ w
    bad = var < VARIANCE_FLOOR
    safe = np.where(bad, 1.0, var)
    skew = np.where(bad, np.nan, ((dev**3) @ w) / safe**1.5)
    kurt = np.where(bad, np.nan, ((dev**4) @ w) / safe**2)
    return MomentDraws(mean, np.maximum(var, 0.0), skew, kurt, int(bad.sum()))


def conditional_moments(fp: FunctionalPosterior, X_row) -> MomentDraws:
    return moments_from_quantiles(fp.predict(X_row), fp.grid)


def moment_prob_score(d1: np.ndarray, d2: np.ndarray) -> float:
    """2 min(P(delta > 0), P(delta < 0)) over paired draws; ties count half to each side."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if d1.shape != d2.shape:
        raise ConfigError("probability scores need paired draws of equal length")
    delta = d1 - d2
    delta = delta[np.isfinite(delta)]
    if delta.size == 0:
        return float("nan")
    tie = 0.5 * np.mean(delta == 0)
    return float(2.0 * min(np.mean(delta > 0) + tie, np.mean(delta < 0) + tie))


@dataclass
class GaussianityScore:
    score: float
    lower: float
    upper: float
    excluded: int
    draws: np.ndarray = field(repr=False)


def gaussianity_score(fit, X_row, level: float = 0.95) -> GaussianityScore:
    """Share of the predicted quantile function's coefficient energy in the first two quantlets."""
    B = fit.B if hasattr(fit, "B") else np.asarray(fit, dtype=float)
    if B.shape[2] < 2:
        raise ConfigError("Gaussianity score needs at least two basis functions")
    c = np.einsum("a,mak->mk", np.asarray(X_row, dtype=float), B)
    num = (c[:, :2] ** 2).sum(axis=1)
    den = (c**2).sum(axis=1)
    ok = den > 0
    r = num[ok] / den[ok]
    if r.size == 0:
        return GaussianityScore(float("nan"), float("nan"), float("nan"), int((~ok).sum()), r)
    lo, hi = np.quantile(r, [(1 - level) / 2, (1 + level) / 2])
    return GaussianityScore(float(r.mean()), float(lo), float(hi), int((~ok).sum()), r)


@dataclass
class DensityTable:
    p: np.ndarray
    cdf_x: np.ndarray  # posterior-mean predicted quantile at each p
    x: np.ndarray
    density: np.ndarray
    degenerate: bool = False
    omitted: int = 0


def predicted_pdf_cdf(fp: FunctionalPosterior, X_row, delta: Optional[float] = None,
                      n_x: Optional[int] = None) -> DensityTable:
    """Predicted CDF and density from quantile draws.

    For each draw the density at x = Q(p) is delta / max(0, Q(p) - Q(p - delta));
    points where that difference vanishes are omitted.  Per-draw densities
    are interpolated onto a common x grid and averaged.
    """
    grid = fp.grid
    h = float(np.median(np.diff(grid)))
    if delta is None:
        delta = h
    step = int(round(delta / h))
    if step < 1 or abs(step * h - delta) > 1e-6 * h:
        raise ConfigError("delta must be a positive multiple of the grid spacing")
    Q = fp.predict(X_row)
    cdf_x = Q.mean(axis=0)
    n_x = grid.size if n_x is None else n_x
    diffs = np.maximum(0.0, Q[:, step:] - Q[:, :-step])
    xs = Q[:, step:]
    valid = diffs > 0
    omitted = int((~valid).sum())
    if not valid.any():
        x0 = float(np.median(Q))
        return DensityTable(grid, cdf_x, np.array([x0]), np.array([np.inf]), True, omitted)
    lo, hi = float(Q.min()), float(Q.max())
    x = np.linspace(lo, hi, n_x)
    dens = np.zeros(n_x)
    for m in range(Q.shape[0]):
        v = valid[m]
        if not v.any():
            continue
        xm, fm = xs[m, v], (step * h) / diffs[m, v]
        order = np.argsort(xm, kind="stable")
        xm, fm = xm[order], fm[order]
        dens += np.interp(x, xm, fm, left=0.0, right=0.0)
    dens /= Q.shape[0]
    return DensityTable(grid, cdf_x, x, dens, False, omitted)


def riemann_mass(table: DensityTable) -> float:
    if table.degenerate or table.x.size < 2:
        return float("nan")
    return float(np.sum(table.density[:-1] * np.diff(table.x)))


def epsilon_monotonicity(qhat: np.ndarray, epsilon: float):
    """Violation fraction per row and overall monotone rate.

    A grid point violates when the running maximum of earlier values exceeds
    the current value by more than epsilon.  Returns (fractions, rate) with
    rate = 1 - mean fraction.
    """
    if epsilon < 0:
        raise ConfigError("epsilon must be non-negative")
    Q = np.atleast_2d(np.asarray(qhat, dtype=float))
    J = Q.shape[1]
    prev_max = np.maximum.accumulate(Q, axis=1)
    viol = np.zeros_like(Q, dtype=bool)
    viol[:, 1:] = prev_max[:, :-1] - Q[:, 1:] > epsilon
    frac = viol.sum(axis=1) / J
    return frac, float(1.0 - frac.mean())


def band_area(band: BandSet, grid: np.ndarray) -> float:
    """Integral of the squared band width under the normalized quadrature measure."""
    return float(trapezoid_weights(grid) @ (band.upper - band.lower) ** 2)


def band_coverage(band: BandSet, truth: np.ndarray, grid: np.ndarray) -> float:
    inside = (band.lower <= truth) & (truth <= band.upper)
    return float(trapezoid_weights(grid) @ inside)
