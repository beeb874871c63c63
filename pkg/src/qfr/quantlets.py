"""Quantlet basis: orthogonalization, energy ordering, denoising, standardization, coefficients."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .eqf import trapezoid_weights
from .errors import ConfigError, SparseDataError
from .selection import concordance
from .wavelets import wavelet_denoise

log = logging.getLogger(__name__)

DEPENDENT_TOL = 1e-10
STANDARDIZE_FLOOR = 1e-12
RIDGE_JITTER = 1e-10
# reciprocal condition number below which Psi Psi^T is treated as singular
_RCOND_FLOOR = 1e-13


@dataclass
class QuantletBasis:
    """K orthonormal-ish functions on a reference grid; rows of `functions`.

    ψ1 ≡ 1, ψ2 is the standardized normal quantile function, ψ3.. are
    denoised, standardized, energy-ordered Beta-derived functions.
    """

    grid: np.ndarray
    functions: np.ndarray
    energies: np.ndarray
    source_index: np.ndarray
    dropped: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    clusters: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.functions.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.grid)

    def evaluate(self, p: np.ndarray) -> np.ndarray:
        """Basis values at probabilities inside the grid range (linear interpolation)."""
        p = np.asarray(p, dtype=float)
        lo, hi = self.grid[0], self.grid[-1]
        slack = 1e-12
        if np.any(p < lo - slack) or np.any(p > hi + slack):
            from .errors import OutOfRangeError
            raise OutOfRangeError(f"probabilities must lie in [{lo!r}, {hi!r}]")
        if p.shape == self.grid.shape and np.allclose(p, self.grid, rtol=0, atol=1e-13):
            return self.functions.copy()
        return np.vstack([np.interp(p, self.grid, f) for f in self.functions])

    def truncate(self, K: int) -> "QuantletBasis":
        if not 1 <= K <= self.K:
            raise ConfigError(f"cannot keep {K} of {self.K} quantlets")
        e = self.energies[:K]
        return QuantletBasis(self.grid, self.functions[:K].copy(), e / e.sum() if e.sum() > 0 else e,
                             self.source_index[:K].copy(), list(self.dropped),
                             dict(self.provenance, truncated_to=K),
                             None if self.clusters is None else self.clusters[:K].copy())

    def gram(self) -> np.ndarray:
        w = self.weights
        return (self.functions * w) @ self.functions.T

    def manifest(self) -> dict:
        return {
            "K": self.K,
            "energies": [float(e) for e in self.energies],
            "source_index": [int(i) for i in self.source_index],
            "dropped": self.dropped,
            "provenance": self.provenance,
            "clusters": None if self.clusters is None else [int(c) for c in self.clusters],
            "hash": self.hash(),
        }

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.grid).tobytes())
        h.update(np.ascontiguousarray(self.functions).tobytes())
        h.update(np.ascontiguousarray(self.source_index, dtype=np.int64).tobytes())
        h.update(json.dumps(self.provenance, sort_keys=True, default=str).encode())
        return h.hexdigest()


@dataclass
class QuantletCoefficients:
    subject_ids: list
    values: np.ndarray  # n x K
    ccc: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]


def gram_schmidt(dset: np.ndarray, grid: np.ndarray, labels: Optional[Sequence] = None):
    """Modified Gram-Schmidt with one re-orthogonalization pass under the quadrature inner product.

    Rows of `dset` are functions on `grid`.  A row whose norm after
    orthogonalization falls below 1e-10 of its original norm is dropped.
    Returns (orthonormal rows, kept labels, dropped labels).
    """
    dset = np.asarray(dset, dtype=float)
    labels = list(range(dset.shape[0])) if labels is None else list(labels)
    w = trapezoid_weights(grid)
    out: list[np.ndarray] = []
    kept, dropped = [], []
    for row, lab in zip(dset, labels):
        v = row.copy()
        norm0 = np.sqrt(w @ (v * v))
        if norm0 == 0:
            dropped.append(lab)
            continue
        for _ in range(2):
            for u in out:
                v -= (w @ (v * u)) * u
        norm = np.sqrt(w @ (v * v))
        if norm < DEPENDENT_TOL * norm0:
            dropped.append(lab)
            continue
        out.append(v / norm)
        kept.append(lab)
    if not out:
        return np.zeros((0, dset.shape[1])), kept, dropped
    return np.vstack(out), kept, dropped


def energy_order(dperp: np.ndarray, qperp: np.ndarray):
    """Permutation putting k >= 3 in descending energy, with energies in the new order.

    `qperp` is the n x K matrix of coefficients of each subject on `dperp`.
    Ties keep the original order.
    """
    qperp = np.asarray(qperp, dtype=float)
    energy = (qperp**2).sum(axis=0)
    total = energy.sum()
    share = energy / total if total > 0 else np.zeros_like(energy)
    K = share.size
    head = np.arange(min(2, K))
    tail = np.arange(2, K)
    tail = tail[np.argsort(-share[tail], kind="stable")]
    perm = np.concatenate([head, tail]).astype(np.int64)
    return perm, share[perm]


def restandardize(psi_dagger: np.ndarray, grid: np.ndarray) -> Optional[np.ndarray]:
    """Centre and scale to mean 0, norm 1 under quadrature; None when the function is flat."""
    w = trapezoid_weights(grid)
    mu = w @ psi_dagger
    centred = psi_dagger - mu
    sd = np.sqrt(w @ centred**2)
    if not sd > STANDARDIZE_FLOOR:
        return None
    return centred / sd


def build_basis(dset: np.ndarray, source_index: Sequence[int], grid: np.ndarray, q_ref: np.ndarray,
                provenance: Optional[dict] = None, denoise: bool = True) -> QuantletBasis:
    """From the reduced dictionary (rows on `grid`) to the final quantlet basis.

    `q_ref` is the n x L matrix of subject quantile functions on `grid`,
    used for energies.  ψ1 and ψ2 are kept exactly; only k >= 3 are
    denoised and re-standardized.
    """
    grid = np.asarray(grid, dtype=float)
    w = trapezoid_weights(grid)
    dperp, kept, dropped = gram_schmidt(dset, grid, labels=list(source_index))
    dropped_log = [{"index": int(d), "reason": "linearly dependent"} for d in dropped]
    lead = np.asarray(dset[:2], dtype=float)
    if (len(kept) < 2 or kept[0] != source_index[0] or kept[1] != source_index[1]
            or np.ptp(lead[0]) > 1e-12 * np.abs(lead[0]).max()
            or np.abs(dperp[:2] - lead).max() > 1e-8):
        raise ConfigError("the constant and Gaussian functions must lead the reduced set")
    # keep the orthonormal leading pair exactly as given
    dperp[:2] = lead
    qperp = (np.asarray(q_ref, dtype=float) * w) @ dperp.T
    perm, share = energy_order(dperp, qperp)
    dperp = dperp[perm]
    kept = [kept[i] for i in perm]
    funcs = [dperp[0], dperp[1]]
    src = [kept[0], kept[1]]
    shares = [share[0], share[1]]
    max_offdiag_pre = float(np.abs((dperp * w) @ dperp.T - np.eye(len(kept))).max())
    for f, lab, e in zip(dperp[2:], kept[2:], share[2:]):
        g = wavelet_denoise(f) if denoise else f
        s = restandardize(g, grid)
        if s is None:
            dropped_log.append({"index": int(lab), "reason": "annihilated by denoising"})
            continue
        funcs.append(s)
        src.append(lab)
        shares.append(e)
    functions = np.vstack(funcs)
    # energy shares of the orthonormal set, renormalized over the survivors
    energies = np.asarray(shares)
    energies = energies / energies.sum() if energies.sum() > 0 else energies
    gram = (functions * w) @ functions.T
    prov = dict(provenance or {})
    prov.update(max_offdiag_pre_denoise=max_offdiag_pre,
                max_offdiag_post_denoise=float(np.abs(gram - np.eye(len(funcs))).max()))
    log.info("quantlet basis: K=%d, max |Gram - I| after denoising %.3g", len(funcs),
             prov["max_offdiag_post_denoise"])
    return QuantletBasis(grid, functions, energies, np.asarray(src, dtype=np.int64), dropped_log, prov)


def _pinv_rows(psi: np.ndarray) -> np.ndarray:
    """Psi^T (Psi Psi^T)^{-1} transposed, i.e. (Psi Psi^T)^{-1} Psi; ridge jitter if singular."""
    G = psi @ psi.T
    if np.linalg.cond(G) > 1.0 / _RCOND_FLOOR:
        warnings.warn("Psi Psi^T is numerically singular; adding ridge jitter", RuntimeWarning)
        G = G + RIDGE_JITTER * np.trace(G) / G.shape[0] * np.eye(G.shape[0])
    return np.linalg.solve(G, psi)


def compute_coefficients(q: np.ndarray, grid: np.ndarray, basis: QuantletBasis):
    """Least-squares coefficients Q* = Q Psi^T (Psi Psi^T)^{-1} on the subject grid, with reconstruction CCC."""
    q = np.asarray(q, dtype=float)
    if basis.K >= q.size:
        raise SparseDataError(f"subject has {q.size} grid points but the basis has K={basis.K} functions")
    psi = basis.evaluate(grid)
    row = _pinv_rows(psi) @ q
    ccc = concordance(q, row @ psi, trapezoid_weights(grid))
    return row, ccc


def coefficients_matrix(subjects: Sequence[tuple], basis: QuantletBasis) -> QuantletCoefficients:
    """Rows of Q* for (subject_id, q, grid) triples."""
    ids, rows, cccs = [], [], []
    for sid, q, grid in subjects:
        r, c = compute_coefficients(q, grid, basis)
        ids.append(sid)
        rows.append(r)
        cccs.append(c)
    return QuantletCoefficients(ids, np.vstack(rows), np.asarray(cccs))
