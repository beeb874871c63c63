"""Comparison fitters sharing the posterior interface of the quantlet model."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .eqf import moments_of_qf, sample_moments, trapezoid_weights
from .errors import ConfigError, UnsupportedMethodError
from .inference import IdentityBasis, MomentDraws
from .mcmc import (PRIOR_FLAT, PRIOR_SPIKE_SLAB, ClusterPartition, DesignMatrix, PosteriorFit,
                   basis_variability, cluster_bases, gibbs_fit)
from .quantlets import QuantletBasis, coefficients_matrix, gram_schmidt

METHODS = ("E", "D", "C", "B", "F", "G")
METHOD_NAMES = {
    "A": "population quantile regression",
    "B": "naive per-p regression",
    "C": "principal-component basis",
    "D": "quantlets, flat prior",
    "E": "quantlets, spike-slab prior",
    "F": "Gaussian quantlets only",
    "G": "moment feature regression",
}


@dataclass
class FitData:
    """Everything a fitter may need; each method uses a subset."""

    subjects: Sequence[tuple]  # (subject_id, q on own grid, grid)
    X: DesignMatrix
    grid: np.ndarray  # common/reference grid
    q_ref: np.ndarray  # n x L subject quantile functions on `grid`
    basis: Optional[QuantletBasis] = None
    dset: Optional[np.ndarray] = None  # reduced dictionary on `grid`, for basis clustering
    raw_values: Optional[Sequence[np.ndarray]] = None  # raw measurements per subject
    epsilon: float = 0.01


@dataclass
class MethodResult:
    method: str
    fit: PosteriorFit
    basis: object
    qstar: Optional[np.ndarray] = None
    partition: Optional[ClusterPartition] = None
    extra: dict = field(default_factory=dict)


@dataclass
class MomentRegressionFit:
    """Flat-prior regressions of per-subject sample moments on the covariates."""

    fit: PosteriorFit  # columns: mean, sd, skewness, kurtosis
    features: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return self.fit.B

    @property
    def M(self) -> int:
        return self.fit.M

    def moments(self, X_row) -> MomentDraws:
        c = np.einsum("a,mak->mk", np.asarray(X_row, dtype=float), self.fit.B)
        sd = c[:, 1]
        return MomentDraws(c[:, 0], sd**2, c[:, 2], c[:, 3], 0)


def _mcmc_kwargs(cfg: dict) -> dict:
    keys = ("iters", "burn", "thin", "nu0", "seed")
    return {k: cfg[k] for k in keys if k in cfg}


def pca_basis(q_ref: np.ndarray, grid: np.ndarray, epsilon: float = 0.01) -> QuantletBasis:
    """Mean function plus the leading principal components reaching 1 - epsilon of centred energy."""
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    mean = q_ref.mean(axis=0)
    centred = (q_ref - mean) * sw
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    energy = s**2
    total = energy.sum()
    if total > 0:
        r = int(np.searchsorted(np.cumsum(energy) / total, 1.0 - epsilon) + 1)
    else:
        r = 0
    pcs = vt[:r] / sw
    funcs, kept, _ = gram_schmidt(np.vstack([mean[None, :], pcs]), grid)
    shares = np.concatenate([[0.0], energy[:r] / total]) if total > 0 else np.zeros(len(kept))
    shares = shares[kept]
    return QuantletBasis(grid, funcs, shares / shares.sum() if shares.sum() > 0 else shares,
                         np.asarray(kept, dtype=np.int64), [], {"kind": "pca", "epsilon": epsilon, "components": r})


def fit_quantlets(data: FitData, cfg: dict, prior: str, K: Optional[int] = None, method: str = "E",
                  H: Optional[int] = None) -> MethodResult:
    basis = data.basis if K is None else data.basis.truncate(K)
    coefs = coefficients_matrix(data.subjects, basis)
    if prior == PRIOR_SPIKE_SLAB and basis.K > 2 and data.dset is not None:
        var = basis_variability(basis.functions, data.dset, data.grid)
        part = cluster_bases(var, H)
    elif prior == PRIOR_SPIKE_SLAB:
        part = ClusterPartition(np.ones(basis.K, dtype=np.int64), np.ones(basis.K))
    else:
        part = None
    fit = gibbs_fit(coefs.values, data.X, part, prior=prior, method=method, **_mcmc_kwargs(cfg))
    basis.clusters = None if part is None else part.labels.copy()
    return MethodResult(method, fit, basis, coefs.values, part, {"ccc": coefs.ccc})


def fit_naive(data: FitData, cfg: dict) -> MethodResult:
    """Independent flat-prior regressions at every grid probability."""
    fit = gibbs_fit(data.q_ref, data.X, None, prior=PRIOR_FLAT, method="B", **_mcmc_kwargs(cfg))
    return MethodResult("B", fit, IdentityBasis(data.grid), data.q_ref)


def fit_pca(data: FitData, cfg: dict) -> MethodResult:
    basis = pca_basis(data.q_ref, data.grid, data.epsilon)
    w = trapezoid_weights(data.grid)
    qstar = (data.q_ref * w) @ basis.functions.T
    fit = gibbs_fit(qstar, data.X, None, prior=PRIOR_FLAT, method="C", **_mcmc_kwargs(cfg))
    return MethodResult("C", fit, basis, qstar)


def moment_features(data: FitData) -> np.ndarray:
    """Per-subject (mean, SD, skewness, kurtosis) from raw values, or from the quantile function."""
    rows = []
    if data.raw_values is not None:
        for v in data.raw_values:
            m = sample_moments(v)
            rows.append((m.mean, m.sd, m.skewness if m.skewness is not None else 0.0,
                         m.kurtosis if m.kurtosis is not None else 3.0))
    else:
        for _, q, g in data.subjects:
            m = moments_of_qf(q, g)
            rows.append((m.mean, m.sd, m.skewness or 0.0, m.kurtosis or 3.0))
    return np.asarray(rows, dtype=float)


def fit_moments(data: FitData, cfg: dict) -> MethodResult:
    feats = moment_features(data)
    fit = gibbs_fit(feats, data.X, None, prior=PRIOR_FLAT, method="G", **_mcmc_kwargs(cfg))
    return MethodResult("G", MomentRegressionFit(fit, feats), None, feats)


def fit_method(method: str, data: FitData, cfg: Optional[dict] = None) -> MethodResult:
    """Dispatch one of E, D, C, B, F, G."""
    cfg = dict(cfg or {})
    method = str(method).upper()
    if method == "A":
        raise UnsupportedMethodError("population quantile regression (method A) is not available")
    if method not in METHODS:
        raise UnsupportedMethodError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if method in ("E", "D", "F") and data.basis is None:
        raise ConfigError(f"method {method} needs a quantlet basis")
    H = cfg.get("H")
    if method == "E":
        return fit_quantlets(data, cfg, PRIOR_SPIKE_SLAB, method="E", H=H)
    if method == "D":
        return fit_quantlets(data, cfg, PRIOR_FLAT, method="D")
    if method == "F":
        return fit_quantlets(data, cfg, PRIOR_SPIKE_SLAB, K=2, method="F")
    if method == "C":
        return fit_pca(data, cfg)
    if method == "B":
        return fit_naive(data, cfg)
    return fit_moments(data, cfg)
