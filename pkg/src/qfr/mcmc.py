"""Quantlet-space regression: basis clustering, spike-slab Gibbs sampler, convergence diagnostics."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.linalg import qr
from scipy.stats import norm

from .eqf import trapezoid_weights
from .errors import ConfigError, SamplerError, ValidationError

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
DEFAULT_ITERS = 2000
DEFAULT_BURN = 200
DEFAULT_NU0 = 0.006
MAX_CLUSTERS = 5

PRIOR_SPIKE_SLAB = "spike-slab"
PRIOR_FLAT = "flat"


@dataclass
class DesignMatrix:
    X: np.ndarray
    names: list = field(default_factory=list)
    kinds: list = field(default_factory=list)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if not np.all(np.isfinite(X)):
            raise ValidationError("design matrix has non-finite entries")
        n, A = X.shape
        if n < A:
            raise ValidationError(f"need at least as many subjects as covariates (n={n}, A={A})")
        _, R, _ = qr(X, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        if d[0] == 0 or np.any(d < RANK_TOL * d[0]):
            raise ValidationError("design matrix is rank deficient")
        self.X = X
        if not self.names:
            self.names = [f"x{a + 1}" for a in range(A)]
        if not self.kinds:
            self.kinds = [_kind(X[:, a]) for a in range(A)]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def A(self) -> int:
        return self.X.shape[1]


def _kind(col: np.ndarray) -> str:
    vals = np.unique(col)
    if vals.size == 1:
        return "intercept"
    if vals.size == 2 and set(vals.tolist()) <= {0.0, 1.0}:
        return "binary"
    return "continuous"


@dataclass
class ClusterPartition:
    labels: np.ndarray  # cluster of each basis function, 1-based
    variability: np.ndarray

    @property
    def H(self) -> int:
        return int(self.labels.max())

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.H + 1)[1:]

    def members(self, h: int) -> np.ndarray:
        return np.flatnonzero(self.labels == h)


def basis_variability(functions: np.ndarray, dset: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """diag(Phi Pi^T Pi Phi^T): squared inner products of each basis function with the reduced dictionary."""
    w = trapezoid_weights(grid)
    ip = (functions * w) @ dset.T
    return (ip**2).sum(axis=1)


def default_cluster_count(variability: np.ndarray) -> int:
    """Decades spanned by the non-Gaussian variabilities (capped) plus the Gaussian cluster."""
    v = np.asarray(variability[2:], dtype=float)
    v = v[v > 0]
    if v.size == 0:
        return 2
    decades = int(math.ceil(np.log10(v.max() / v.min()) - 1e-12)) if v.size > 1 else 1
    return min(max(decades, 1), MAX_CLUSTERS) + 1


def cluster_bases(variability: np.ndarray, H: Optional[int] = None) -> ClusterPartition:
    """Gaussian pair in cluster 1; the rest grouped by complete linkage on log10 variability."""
    variability = np.asarray(variability, dtype=float)
    K = variability.size
    if H is None:
        H = default_cluster_count(variability)
    if H < 2:
        raise ConfigError("at least two clusters are required")
    if K < H:
        raise ConfigError(f"cannot form {H} clusters from {K} basis functions")
    labels = np.ones(K, dtype=np.int64)
    rest = variability[2:]
    if rest.size:
        logv = np.log10(np.maximum(rest, np.finfo(float).tiny))
        if rest.size == 1 or np.ptp(logv) == 0:
            if H > 2:
                warnings.warn("all basis variabilities are equal; using one non-Gaussian cluster", RuntimeWarning)
            labels[2:] = 2
        else:
            z = linkage(logv.reshape(-1, 1), method="complete")
            raw = fcluster(z, t=H - 1, criterion="maxclust")
            # renumber so cluster 2 holds the largest variabilities
            order = sorted(set(raw.tolist()), key=lambda c: -logv[raw == c].max())
            remap = {c: i + 2 for i, c in enumerate(order)}
            labels[2:] = [remap[c] for c in raw]
    return ClusterPartition(labels, variability)


@dataclass
class PosteriorFit:
    B: np.ndarray  # M x A x K
    gamma: np.ndarray  # M x A x K
    sigma2: np.ndarray  # M x K
    pi_hat: Optional[np.ndarray]  # M x A x H
    Gamma_hat: Optional[np.ndarray]
    config: dict
    method: str = "E"

    @property
    def M(self) -> int:
        return self.B.shape[0]

    def posterior_mean(self) -> np.ndarray:
        return self.B.mean(axis=0)

    def geweke(self) -> dict:
        """Geweke p-values for every (a, k) coefficient chain and every sigma^2_k chain."""
        M, A, K = self.B.shape
        pb = np.ones((A, K))
        for a in range(A):
            for k in range(K):
                pb[a, k] = geweke_pvalue(self.B[:, a, k])
        ps = np.array([geweke_pvalue(self.sigma2[:, k]) for k in range(K)])
        return {"B": pb, "sigma2": ps}


def _batch_mean_variance(x: np.ndarray) -> float:
    """Variance of the sample mean of a correlated chain via non-overlapping batch means."""
    n = x.size
    nb = max(2, int(math.floor(math.sqrt(n))))
    size = n // nb
    if size < 1:
        return float(np.var(x, ddof=1) / n) if n > 1 else 0.0
    means = x[: nb * size].reshape(nb, size).mean(axis=1)
    return float(np.var(means, ddof=1) / nb)


def geweke_pvalue(chain: np.ndarray, first: float = 0.1, last: float = 0.5) -> float:
    """Two-sided p-value of the Geweke z-score comparing early and late chain segments."""
    chain = np.asarray(chain, dtype=float)
    n = chain.size
    a = chain[: max(2, int(first * n))]
    b = chain[n - max(2, int(last * n)):]
    var = _batch_mean_variance(a) + _batch_mean_variance(b)
    if var <= 0:
        return 1.0
    z = (a.mean() - b.mean()) / math.sqrt(var)
    return float(2.0 * norm.sf(abs(z)))


def empirical_bayes_update(gamma: np.ndarray, zeta: np.ndarray, labels: np.ndarray, H: int):
    """Cluster-level plug-in estimates for one covariate.

    Returns (pi_hat, Gamma_hat, odds) where pi_hat, Gamma_hat have one entry
    per cluster and odds one entry per basis function.  pi_hat is clamped to
    [1/(2|K_h|), 1 - 1/(2|K_h|)].
    """
    gamma = np.asarray(gamma, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    idx = labels - 1
    size = np.bincount(idx, minlength=H).astype(float)
    g_sum = np.bincount(idx, weights=gamma, minlength=H)
    z_sum = np.bincount(idx, weights=gamma * zeta**2, minlength=H)
    with np.errstate(invalid="ignore", divide="ignore"):
        pi = np.where(size > 0, g_sum / np.maximum(size, 1), 0.0)
        lo = 1.0 / (2.0 * np.maximum(size, 1))
        pi = np.clip(pi, lo, 1.0 - lo)
        Gam = np.where(g_sum > 0, np.maximum(0.0, z_sum / np.where(g_sum > 0, g_sum, 1.0) - 1.0), 0.0)
    p_k, G_k = pi[idx], Gam[idx]
    log_odds = (np.log(p_k) - np.log1p(-p_k) - 0.5 * np.log1p(G_k)
                + 0.5 * zeta**2 * G_k / (1.0 + G_k))
    return pi, Gam, np.exp(np.minimum(log_odds, 700.0))


def _inclusion_probability(pi_k, G_k, zeta):
    log_odds = (np.log(pi_k) - np.log1p(-pi_k) - 0.5 * np.log1p(G_k)
                + 0.5 * zeta**2 * G_k / (1.0 + G_k))
    return 1.0 / (1.0 + np.exp(-np.clip(log_odds, -700.0, 700.0)))


def gibbs_fit(qstar: np.ndarray, X, partition: Optional[ClusterPartition] = None,
              iters: int = DEFAULT_ITERS, burn: int = DEFAULT_BURN, thin: int = 1,
              nu0: float = DEFAULT_NU0, seed: int = 0, prior: str = PRIOR_SPIKE_SLAB,
              stream_ids: Optional[Sequence[int]] = None, method: str = "E") -> PosteriorFit:
    """Gibbs sampler for Q*_k = X B*_k + E*_k, one independent model per column k.

    `iters` counts every iteration including the `burn` discarded ones.
    Column k draws its random numbers from its own stream, keyed by
    ``stream_ids[k]`` (default k), so the fit of each column does not depend
    on how many other columns there are.  With ``prior="flat"`` every
    coefficient is always included with an improper flat slab.
    """
    Q = np.asarray(qstar, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None]
    if not isinstance(X, DesignMatrix):
        X = DesignMatrix(X)
    Xm = X.X
    n, A = Xm.shape
    K = Q.shape[1]
    if Q.shape[0] != n:
        raise ValidationError(f"Q* has {Q.shape[0]} rows but X has {n}")
    if not (iters > burn >= 0 and thin >= 1):
        raise ConfigError("need iters > burn >= 0 and thin >= 1")
    if not nu0 > 0:
        raise ConfigError("nu0 must be positive")
    if prior not in (PRIOR_SPIKE_SLAB, PRIOR_FLAT):
        raise ConfigError(f"unknown prior {prior!r}")
    if prior == PRIOR_SPIKE_SLAB:
        if partition is None:
            partition = ClusterPartition(np.ones(K, dtype=np.int64), np.ones(K))
        labels = np.asarray(partition.labels, dtype=np.int64)
        if labels.size != K:
            raise ConfigError("partition size does not match the number of columns")
        H = int(labels.max())
    else:
        labels, H = np.ones(K, dtype=np.int64), 1

    XtX = Xm.T @ Xm
    B_ols = np.linalg.solve(XtX, Xm.T @ Q)
    sse = np.einsum("ik,ik->k", Q, Q) - np.einsum("ak,ak->k", B_ols, Xm.T @ Q)
    sse = np.maximum(sse, 0.0)
    xx = np.einsum("ia,ia->a", Xm, Xm)

    keep = np.arange(burn, iters)[::thin]
    M = keep.size
    streams = np.arange(K) if stream_ids is None else np.asarray(stream_ids, dtype=np.int64)
    shape = 0.5 * (nu0 + n)
    gam_draws = np.empty((iters, K))
    unif = np.empty((iters, A, K))
    gauss = np.empty((iters, A, K))
    for k in range(K):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(int(streams[k]),)))
        gam_draws[:, k] = rng.standard_gamma(shape, size=iters)
        unif[:, :, k] = rng.random((iters, A))
        gauss[:, :, k] = rng.standard_normal((iters, A))

    B = B_ols.copy()
    gamma = np.ones((A, K), dtype=bool)
    out_B = np.empty((M, A, K))
    out_g = np.empty((M, A, K), dtype=bool)
    out_s = np.empty((M, K))
    out_pi = np.empty((M, A, H)) if prior == PRIOR_SPIKE_SLAB else None
    out_G = np.empty((M, A, H)) if prior == PRIOR_SPIKE_SLAB else None
    resid = Q - Xm @ B
    slot = 0
    pi_row = np.zeros((A, H))
    G_row = np.zeros((A, H))
    for t in range(iters):
        sigma2 = 0.5 * (nu0 + sse) / gam_draws[t]
        if not np.all(np.isfinite(sigma2)) or np.any(sigma2 <= 0):
            raise SamplerError(f"non-finite residual variance draw at iteration {t}")
        for a in range(A):
            x = Xm[:, a]
            partial = resid + np.outer(x, B[a])
            bhat = x @ partial / xx[a]
            V = sigma2 / xx[a]
            if prior == PRIOR_FLAT:
                new = bhat + np.sqrt(V) * gauss[t, a]
                gamma[a] = True
            else:
                zeta = bhat / np.sqrt(V)
                pi_h, G_h, _ = empirical_bayes_update(gamma[a], zeta, labels, H)
                pi_row[a], G_row[a] = pi_h, G_h
                pk, Gk = pi_h[labels - 1], G_h[labels - 1]
                alpha = _inclusion_probability(pk, Gk, zeta)
                inc = unif[t, a] < alpha
                shrink = Gk / (1.0 + Gk)
                new = np.where(inc, bhat * shrink + np.sqrt(V * shrink) * gauss[t, a], 0.0)
                gamma[a] = inc
            resid = partial - np.outer(x, new)
            B[a] = new
        if not np.all(np.isfinite(B)):
            raise SamplerError(f"non-finite coefficient draw at iteration {t}")
        if slot < M and t == keep[slot]:
            out_B[slot] = B
            out_g[slot] = gamma
            out_s[slot] = sigma2
            if out_pi is not None:
                out_pi[slot] = pi_row
                out_G[slot] = G_row
            slot += 1
    config = {"iters": iters, "burn": burn, "thin": thin, "nu0": nu0, "seed": seed, "prior": prior,
              "H": H, "labels": labels.tolist()}
    return PosteriorFit(out_B, out_g, out_s, out_pi, out_G, config, method)


def ols(qstar: np.ndarray, X) -> np.ndarray:
    Xm = X.X if isinstance(X, DesignMatrix) else np.asarray(X, dtype=float)
    return np.linalg.lstsq(Xm, np.asarray(qstar, dtype=float), rcond=None)[0]


def mc_standard_error(draws: np.ndarray) -> np.ndarray:
    """Batch-means standard error of the posterior mean along axis 0."""
    draws = np.asarray(draws, dtype=float)
    flat = draws.reshape(draws.shape[0], -1)
    se = np.array([math.sqrt(max(_batch_mean_variance(flat[:, j]), 0.0)) for j in range(flat.shape[1])])
    return se.reshape(draws.shape[1:])
