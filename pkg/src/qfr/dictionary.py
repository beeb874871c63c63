"""Overcomplete Beta-CDF dictionary with the Gaussian pair projected out."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import ndtri

from .eqf import trapezoid_weights
from .errors import ConfigError
from .specfun import beta_cdf_matrix

DEFAULT_BOUNDS = ((0.1, 1000.0), (0.1, 1000.0))
DEFAULT_K_OVER = 12000
# a Beta CDF this flat on the grid (or this close to the Gaussian span) is redrawn
_MIN_SPREAD = 1e-6
_MAX_DRAW_ROUNDS = 1000

KIND_CONSTANT = "constant"
KIND_GAUSSIAN = "gaussian"
KIND_BETA = "beta"


@dataclass(frozen=True)
class DictionaryElement:
    index: int
    kind: str
    a: Optional[float]
    b: Optional[float]
    values: np.ndarray


def _inner(w, f, g):
    return w @ (f * g)


def gaussian_pair(grid: np.ndarray, weights: Optional[np.ndarray] = None):
    """Constant and standard-normal-quantile functions, orthonormal on `grid`.

    Returns (xi1, xi2, center, scale) where xi2 = (Phi^-1(p) - center) / scale.
    """
    grid = np.asarray(grid, dtype=float)
    w = trapezoid_weights(grid) if weights is None else weights
    z = ndtri(grid)
    center = float(w @ z)
    scale = float(np.sqrt(w @ (z - center) ** 2))
    return np.ones_like(grid), (z - center) / scale, center, scale


def project_out_gaussian(f: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Remove the components of f along the constant and Gaussian-quantile functions."""
    f = np.asarray(f, dtype=float)
    w = trapezoid_weights(grid)
    xi1, xi2, _, _ = gaussian_pair(grid, w)
    out = f - xi1 * _inner(w, f, xi1)
    return out - xi2 * _inner(w, out, xi2)


@dataclass
class Dictionary:
    """Dictionary elements evaluated on a reference grid.

    Row 0 is the constant function, row 1 the standardized normal quantile
    function, rows 2.. the standardized, Gaussian-orthogonalized Beta CDFs.
    The affine constants used on the reference grid are stored so elements
    can be re-evaluated on any other probability grid.
    """

    theta: np.ndarray
    grid: np.ndarray
    seed: Optional[int]
    bounds: tuple
    mu: np.ndarray
    sigma: np.ndarray
    proj1: np.ndarray
    proj2: np.ndarray
    norm: np.ndarray
    gauss_center: float
    gauss_scale: float
    values: np.ndarray = field(repr=False)
    redrawn: int = 0

    def __len__(self) -> int:
        return self.theta.shape[0] + 2

    @property
    def k_over(self) -> int:
        return self.theta.shape[0]

    @property
    def kinds(self) -> list[str]:
        return [KIND_CONSTANT, KIND_GAUSSIAN] + [KIND_BETA] * self.k_over

    def element(self, k: int) -> DictionaryElement:
        if k == 0:
            return DictionaryElement(0, KIND_CONSTANT, None, None, self.values[0])
        if k == 1:
            return DictionaryElement(1, KIND_GAUSSIAN, None, None, self.values[1])
        a, b = self.theta[k - 2]
        return DictionaryElement(k, KIND_BETA, float(a), float(b), self.values[k])

    @property
    def elements(self) -> list[DictionaryElement]:
        return [self.element(k) for k in range(len(self))]

    def evaluate(self, p: np.ndarray, index: Optional[Sequence[int]] = None) -> np.ndarray:
        """Element values at arbitrary probabilities; rows follow `index` (all when None)."""
        p = np.asarray(p, dtype=float)
        if index is None:
            index = np.arange(len(self))
        index = np.asarray(index, dtype=np.int64)
        if p.shape == self.grid.shape and np.array_equal(p, self.grid):
            return self.values[index]
        out = np.empty((index.size, p.size))
        xi2 = (ndtri(p) - self.gauss_center) / self.gauss_scale
        beta_rows = np.flatnonzero(index >= 2)
        out[index == 0] = 1.0
        out[index == 1] = xi2
        if beta_rows.size:
            j = index[beta_rows] - 2
            F = beta_cdf_matrix(self.theta[j, 0], self.theta[j, 1], p)
            F -= self.mu[j, None]
            F /= self.sigma[j, None]
            F -= self.proj1[j, None]
            F -= self.proj2[j, None] * xi2[None, :]
            F /= self.norm[j, None]
            out[beta_rows] = F
        return out

    def manifest(self) -> dict:
        return {
            "k_over": self.k_over,
            "bounds": [list(map(float, b)) for b in self.bounds],
            "seed": self.seed,
            "grid_size": int(self.grid.size),
            "grid_first": float(self.grid[0]),
            "grid_last": float(self.grid[-1]),
            "redrawn": self.redrawn,
            "theta_sha256": hashlib.sha256(np.ascontiguousarray(self.theta).tobytes()).hexdigest(),
        }


def _normalize_bounds(theta_bounds) -> tuple:
    tb = np.asarray(theta_bounds, dtype=float)
    if tb.shape == (2,):
        tb = np.vstack([tb, tb])
    if tb.shape != (2, 2):
        raise ConfigError("theta_bounds must be (low, high) or ((a_low, a_high), (b_low, b_high))")
    for low, high in tb:
        if not (low > 0 and high > low):
            raise ConfigError(f"degenerate Beta parameter bounds ({low}, {high})")
    return tuple(map(tuple, tb))


def _standardize(theta, grid, w, xi2):
    F = beta_cdf_matrix(theta[:, 0], theta[:, 1], grid)
    mu = F @ w
    F -= mu[:, None]
    sigma = np.sqrt((F * F) @ w)
    ok = sigma > _MIN_SPREAD
    F[ok] /= sigma[ok, None]
    proj1 = F @ w
    F -= proj1[:, None]
    proj2 = F @ (w * xi2)
    F -= proj2[:, None] * xi2[None, :]
    norm = np.sqrt((F * F) @ w)
    ok &= norm > _MIN_SPREAD
    F[ok] /= norm[ok, None]
    return F, mu, sigma, proj1, proj2, norm, ok


def make_dictionary(
    k_over: int = DEFAULT_K_OVER,
    theta_bounds=DEFAULT_BOUNDS,
    grid: Optional[np.ndarray] = None,
    seed: Optional[int] = 0,
) -> Dictionary:
    """Sample Beta parameters uniformly within `theta_bounds` and build the dictionary.

    Parameter pairs whose CDF is numerically flat on the grid, or lies in the
    Gaussian span, are redrawn from the same stream so the dictionary always
    holds exactly ``k_over + 2`` elements.
    """
    if k_over < 0:
        raise ConfigError("k_over must be non-negative")
    bounds = _normalize_bounds(theta_bounds)
    if grid is None:
        grid = np.arange(1, 1025) / 1025.0
    grid = np.asarray(grid, dtype=float)
    w = trapezoid_weights(grid)
    xi1, xi2, center, scale = gaussian_pair(grid, w)
    rng = np.random.default_rng(seed)
    low = np.array([bounds[0][0], bounds[1][0]])
    high = np.array([bounds[0][1], bounds[1][1]])

    theta = rng.uniform(low, high, size=(k_over, 2))
    parts = _standardize(theta, grid, w, xi2) if k_over else None
    redrawn = 0
    if k_over:
        F, mu, sigma, proj1, proj2, norm, ok = parts
        rounds = 0
        while not ok.all():
            bad = np.flatnonzero(~ok)
            redrawn += bad.size
            theta[bad] = rng.uniform(low, high, size=(bad.size, 2))
            sub = _standardize(theta[bad], grid, w, xi2)
            F[bad], mu[bad], sigma[bad], proj1[bad], proj2[bad], norm[bad], ok[bad] = sub
            rounds += 1
            if rounds > _MAX_DRAW_ROUNDS:
                raise ConfigError("could not draw non-degenerate Beta parameters within bounds")
        values = np.vstack([xi1[None, :], xi2[None, :], F])
    else:
        mu = sigma = proj1 = proj2 = norm = np.zeros(0)
        values = np.vstack([xi1[None, :], xi2[None, :]])
    return Dictionary(theta, grid, seed, bounds, mu, sigma, proj1, proj2, norm,
                      center, scale, values, redrawn)


def bernstein_quantile_approx(q: Union[Callable, Sequence[float]], n: int, p) -> np.ndarray:
    """Beta-CDF mixture approximation of a quantile function.

    Q_n(p) = sum_k q(k/n)/(n+1) * F_{k,n}(p) where F_{k,n} is the Beta(k+1, n-k+1)
    CDF.  It converges to Q(p) - Q(0) as n grows when q = Q' is continuous.
    `q` is either the derivative itself or its n+1 samples at k/n.
    """
    if n < 0:
        raise ConfigError("order n must be non-negative")
    if callable(q):
        nodes = np.linspace(0.0, 1.0, n + 1) if n > 0 else np.zeros(1)
        coef = np.asarray([q(x) for x in nodes], dtype=float)
    else:
        coef = np.asarray(q, dtype=float)
        if coef.size != n + 1:
            raise ConfigError(f"expected {n + 1} derivative samples, got {coef.size}")
    k = np.arange(n + 1, dtype=float)
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    F = beta_cdf_matrix(k + 1.0, n - k + 1.0, p_arr)
    out = (coef / (n + 1.0)) @ F
    return float(out[0]) if np.ndim(p) == 0 else out


def dictionary_cache_key(k_over, theta_bounds, grid, seed) -> str:
    payload = json.dumps([int(k_over), [list(map(float, b)) for b in _normalize_bounds(theta_bounds)], seed])
    h = hashlib.sha256(payload.encode())
    h.update(np.ascontiguousarray(grid, dtype=float).tobytes())
    return h.hexdigest()
