"""Per-subject Lasso selection of dictionary elements and near-lossless reduction."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Hashable, Optional, Sequence

import numba
import numpy as np
from scipy.linalg import qr

from .eqf import trapezoid_weights
from .errors import ConfigError

log = logging.getLogger(__name__)

UNPENALIZED = (0, 1)
CD_TOL = 1e-7
CD_MAX_SWEEPS = 10_000
N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-4
N_FOLDS = 10
# columns whose residual norm falls below this fraction of the largest are dropped
QR_RANK_TOL = 1e-10


@dataclass
class SelectionResult:
    subject_id: Hashable
    lambda_: float
    coefficients: np.ndarray
    converged: bool = True
    cv_errors: Optional[np.ndarray] = field(default=None, repr=False)
    lambda_path: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def selected(self) -> np.ndarray:
        """Indices of every element with a nonzero coefficient."""
        return np.flatnonzero(self.coefficients != 0)

    @property
    def selected_beta(self) -> np.ndarray:
        """Selected penalized (Beta) elements; these feed the union counts."""
        nz = self.selected
        return nz[nz >= 2]


@dataclass
class LosslessnessCurve:
    thresholds: np.ndarray
    K: np.ndarray
    rho_min: np.ndarray
    rho_mean: np.ndarray
    rho: np.ndarray = field(repr=False)  # (len(thresholds), n)


class GramCache:
    """Columns of X X^T for a weighted design.

    `xs` is (P, N): one row per dictionary element, already scaled by
    sqrt(quadrature weight).  The full Gram matrix is formed with one matrix
    product when it fits in `max_bytes`; otherwise columns are built lazily.
    Either way the cache is shared across folds and across subjects that
    have the same grid.
    """

    def __init__(self, xs: np.ndarray, max_bytes: float = 2.5e9):
        self.xs = np.ascontiguousarray(xs)
        p = self.xs.shape[0]
        self.diag = np.einsum("ij,ij->i", self.xs, self.xs)
        self.full = self.xs @ self.xs.T if p * p * 8 <= max_bytes else None
        self._cols: dict[int, np.ndarray] = {}

    @property
    def n_features(self) -> int:
        return self.xs.shape[0]

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        if self.full is not None:
            return self.full[:, idx]
        missing = [int(j) for j in idx if int(j) not in self._cols]
        if missing:
            block = self.xs @ self.xs[missing].T
            for r, j in enumerate(missing):
                self._cols[j] = block[:, r].copy()
        if idx.size == 0:
            return np.zeros((self.n_features, 0))
        return np.column_stack([self._cols[int(j)] for j in idx])

    def rows(self, idx) -> np.ndarray:
        """Gram rows for `idx` as a (len(idx), P) array."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.full is not None:
            return self.full[idx]
        return self.columns(idx).T

    def column(self, j: int) -> np.ndarray:
        return self.columns([j])[:, 0]


class LassoProblem:
    """Least squares ||y - sum_k xi_k c_k||^2_w + lam * sum_{k>=2} |c_k| on a row subset.

    Held-out rows enter only through a rank-|held| correction of the shared
    Gram matrix, so folds never rebuild it.
    """

    def __init__(self, cache: GramCache, ys: np.ndarray, held: Optional[np.ndarray] = None, scale: float = 1.0):
        self.cache = cache
        self.held = held
        self.scale = scale
        xs = cache.xs
        if held is None:
            self._xh = np.zeros((xs.shape[0], 0))
            yh = np.zeros(0)
        else:
            self._xh = np.ascontiguousarray(xs[:, held])
            yh = ys[held]
        self.xty = scale * (xs @ ys - self._xh @ yh)
        self.diag = scale * (cache.diag - np.einsum("ij,ij->i", self._xh, self._xh))
        self.yty = scale * float(ys @ ys - yh @ yh)
        self.penalized = np.ones(cache.n_features, dtype=bool)
        self.penalized[list(UNPENALIZED)] = False

    def gram(self, rows, cols) -> np.ndarray:
        """Sub-block G[rows][:, cols] of the (fold-corrected, scaled) Gram matrix."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        full = self.cache.full
        base = full[np.ix_(rows, cols)] if full is not None else self.cache.rows(rows)[:, cols]
        return self.scale * (base - self._xh[rows] @ self._xh[cols].T)

    def columns(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return self.gram(idx, np.arange(self.cache.n_features)).T

    def column(self, j: int) -> np.ndarray:
        return self.columns([j])[:, 0]

    def gradient(self, support: np.ndarray, b: np.ndarray) -> np.ndarray:
        """xty - G[:, support] b."""
        support = np.asarray(support, dtype=np.int64)
        full = self.cache.full
        if full is not None:
            gb = _row_combination(full, support, b)
        else:
            gb = _row_combination(self.cache.rows(support), np.arange(support.size), b)
        if self._xh.shape[1]:
            gb -= self._xh @ (self._xh[support].T @ b)
        return self.xty - self.scale * gb

    def objective(self, beta: np.ndarray, lam: float) -> float:
        nz = np.flatnonzero(beta)
        b = beta[nz]
        g = self.gram(nz, nz)
        return float(self.yty - 2 * b @ self.xty[nz] + b @ g @ b + lam * np.abs(b[self.penalized[nz]]).sum())


@numba.njit(cache=True, nogil=True)
def _row_combination(rows, pos, b):
    """sum_r b[r] * rows[pos[r]] without materializing the selected rows."""
    out = np.zeros(rows.shape[1])
    for r in range(pos.size):
        row = rows[pos[r]]
        c = b[r]
        for j in range(out.size):
            out[j] += c * row[j]
    return out


# Anderson extrapolation every _AA_DEPTH sweeps, kept only when it lowers the objective
_AA_DEPTH = 5


@numba.njit(cache=True, nogil=True)
def _objective(G, xty, beta, lam, penal, yty):
    pen = 0.0
    for j in range(beta.size):
        if penal[j]:
            pen += abs(beta[j])
    return yty - 2.0 * (beta @ xty) + beta @ (G @ beta) + lam * pen


@numba.njit(cache=True, nogil=True)
def _sweep(G, grad, beta, half, penal):
    n = beta.size
    max_delta = 0.0
    for j in range(n):
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        z = grad[j] + gjj * beta[j]
        if penal[j]:
            if z > half:
                new = (z - half) / gjj
            elif z < -half:
                new = (z + half) / gjj
            else:
                new = 0.0
        else:
            new = z / gjj
        d = new - beta[j]
        if d != 0.0:
            for l in range(n):
                grad[l] -= d * G[l, j]
            beta[j] = new
            if abs(d) > max_delta:
                max_delta = abs(d)
    return max_delta


@numba.njit(cache=True, nogil=True)
def _feature_sign(G, xty, beta, lam, penal, yty, max_iter):
    """Feature-sign search for the restricted problem, started at `beta`.

    Each step solves the quadratic on the current signed support and line
    searches toward it through the zero crossings, so the objective strictly
    decreases and the search ends at an exact minimizer.  Returns
    (x, found).
    """
    n = beta.size
    half = 0.5 * lam
    x = beta.copy()
    theta = np.zeros(n)
    active = np.zeros(n, dtype=np.bool_)
    for j in range(n):
        if not penal[j]:
            active[j] = True
        elif x[j] != 0.0:
            active[j] = True
            theta[j] = np.sign(x[j])
    scale = half + np.abs(xty).max()
    tol = 1e-11 * scale
    f_cur = _objective(G, xty, x, lam, penal, yty)
    for _ in range(max_iter):
        grad = xty - G @ x
        settled = True
        for j in range(n):
            if active[j]:
                r = grad[j] - half * theta[j] if penal[j] else grad[j]
                if abs(r) > tol:
                    settled = False
                    break
        if settled:
            jmax = -1
            best = half + tol
            for j in range(n):
                if penal[j] and not active[j] and abs(grad[j]) > best:
                    best = abs(grad[j])
                    jmax = j
            if jmax < 0:
                return x, True
            theta[jmax] = np.sign(grad[jmax])
            active[jmax] = True
        supp = np.flatnonzero(active)
        k = supp.size
        Gs = np.empty((k, k))
        rhs = np.empty(k)
        for r in range(k):
            j = supp[r]
            rhs[r] = xty[j] - half * theta[j]
            for c in range(k):
                Gs[r, c] = G[j, supp[c]]
        try:
            z = np.linalg.solve(Gs, rhs)
        except Exception:  # singular support
            return x, False
        if not np.all(np.isfinite(z)):
            return x, False
        x0 = x[supp].copy()
        # candidate step lengths: the full step and every sign crossing before it
        ts = [1.0]
        for r in range(k):
            j = supp[r]
            if penal[j] and x0[r] != 0.0 and x0[r] * z[r] < 0.0:
                ts.append(x0[r] / (x0[r] - z[r]))
        best_t = -1.0
        best_f = f_cur
        trial = x.copy()
        for t in ts:
            for r in range(k):
                trial[supp[r]] = x0[r] + t * (z[r] - x0[r])
            f = _objective(G, xty, trial, lam, penal, yty)
            if f < best_f:
                best_f = f
                best_t = t
        if best_t < 0.0:
            return x, False
        for r in range(k):
            j = supp[r]
            v = x0[r] + best_t * (z[r] - x0[r])
            if penal[j] and (abs(v) <= 1e-15 * (abs(x0[r]) + abs(z[r])) or
                             (x0[r] != 0.0 and x0[r] / (x0[r] - z[r]) == best_t and x0[r] * z[r] < 0.0)):
                v = 0.0
            x[j] = v
            if penal[j]:
                if v == 0.0:
                    active[j] = False
                    theta[j] = 0.0
                else:
                    theta[j] = np.sign(v)
        f_cur = _objective(G, xty, x, lam, penal, yty)
    return x, False


@numba.njit(cache=True, nogil=True)
def _cd_active(G, xty, beta, lam, penal, tol, max_sweeps, yty, trace):
    """Cyclic coordinate descent on an active set with covariance updates.

    Every few sweeps an Anderson-extrapolated point is tried and kept only if
    it has a lower objective, so the objective never increases from one
    sweep to the next.
    """
    n = beta.size
    grad = xty - G @ beta
    half = 0.5 * lam
    objs = np.empty(max_sweeps + 1 if trace else 1)
    if trace:
        objs[0] = _objective(G, xty, beta, lam, penal, yty)
    hist = np.empty((_AA_DEPTH + 1, n))
    hist[0] = beta
    filled = 1
    sweeps = 0
    next_newton = _AA_DEPTH
    gap = _AA_DEPTH
    converged = False
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = _sweep(G, grad, beta, half, penal)
        if max_delta < tol:
            if trace:
                objs[sweeps] = _objective(G, xty, beta, lam, penal, yty)
            converged = True
            break
        hist[filled] = beta
        filled += 1
        if sweeps >= next_newton:
            # failed exact solves are retried on a doubling schedule
            cand, found = _feature_sign(G, xty, beta, lam, penal, yty, 4 * n + 20)
            if found and _objective(G, xty, cand, lam, penal, yty) <= _objective(G, xty, beta, lam, penal, yty):
                beta[:] = cand
                grad[:] = xty - G @ beta
                hist[0] = beta
                filled = 1
                next_newton = sweeps + _AA_DEPTH
            else:
                gap *= 2
                next_newton = sweeps + gap
        if filled == _AA_DEPTH + 1:
            U = np.empty((n, _AA_DEPTH))
            for k in range(_AA_DEPTH):
                U[:, k] = hist[k + 1] - hist[k]
            M = U.T @ U
            reg = 1e-10 * np.trace(M) + 1e-300
            for k in range(_AA_DEPTH):
                M[k, k] += reg
            z = np.linalg.solve(M, np.ones(_AA_DEPTH))
            sz = z.sum()
            if np.isfinite(sz) and sz != 0.0:
                c = z / sz
                cand = np.zeros(n)
                for k in range(_AA_DEPTH):
                    cand += c[k] * hist[k + 1]
                # extrapolation must respect the sign pattern of the penalty
                for j in range(n):
                    if penal[j] and beta[j] == 0.0:
                        cand[j] = 0.0
                if _objective(G, xty, cand, lam, penal, yty) < _objective(G, xty, beta, lam, penal, yty):
                    beta[:] = cand
                    grad[:] = xty - G @ beta
            hist[0] = beta
            filled = 1
        if trace:
            objs[sweeps] = _objective(G, xty, beta, lam, penal, yty)
    return beta, sweeps, converged, objs[: sweeps + 1] if trace else objs[:0]


def _solve(problem: LassoProblem, lam: float, beta: np.ndarray, tol: float, max_sweeps: int,
           trace: Optional[list] = None, max_add: int = 20):
    """Solve at one lambda with warm start `beta` (modified in place), KKT-checked on all features."""
    active = np.union1d(np.flatnonzero(beta), UNPENALIZED).astype(np.int64)
    converged = True
    while True:
        G_aa = np.ascontiguousarray(problem.gram(active, active))
        b_a, sweeps, ok, objs = _cd_active(G_aa, problem.xty[active].copy(), beta[active].copy(), lam,
                                           problem.penalized[active], tol, max_sweeps, problem.yty,
                                           trace is not None)
        if trace is not None:
            trace.append(objs)
        beta[active] = b_a
        nz = np.flatnonzero(beta)
        grad = problem.gradient(nz, beta[nz])
        viol = np.abs(grad) > 0.5 * lam * (1 + 1e-9)
        viol[active] = False
        viol &= problem.penalized
        if not viol.any():
            converged &= ok
            break
        cand = np.flatnonzero(viol)
        if cand.size > max_add:
            cand = cand[np.argsort(-np.abs(grad[cand]))[:max_add]]
        active = np.union1d(active, cand)
    return beta, converged


def _unpenalized_fit(problem: LassoProblem) -> np.ndarray:
    u = np.asarray(UNPENALIZED)
    G = problem.columns(u)
    beta = np.zeros(problem.cache.n_features)
    beta[u] = np.linalg.solve(G[u], problem.xty[u])
    return beta


def lambda_max(problem: LassoProblem) -> float:
    """Smallest penalty at which every penalized coefficient is zero."""
    beta = _unpenalized_fit(problem)
    u = np.asarray(UNPENALIZED)
    grad = problem.xty - problem.columns(u) @ beta[u]
    grad[u] = 0.0
    return float(2.0 * np.abs(grad).max())


def lambda_path(lam_max: float, n: int = N_LAMBDA, ratio: float = LAMBDA_MIN_RATIO) -> np.ndarray:
    if not (lam_max > 0 and np.isfinite(lam_max)) or n < 2:
        raise ConfigError(f"degenerate lambda path (lambda_max={lam_max!r}, n={n})")
    return np.geomspace(lam_max, lam_max * ratio, n)


def _design(values_on_grid: np.ndarray, grid: np.ndarray):
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    return values_on_grid * sw[None, :], sw, w


def lasso_fit(q: np.ndarray, dict_values: np.ndarray, lam: float, grid: Optional[np.ndarray] = None,
              tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS, cache: Optional[GramCache] = None,
              trace: Optional[list] = None):
    """Lasso coefficients of `q` on the rows of `dict_values` (elements x grid points).

    Minimizes ||q - sum_k xi_k c_k||^2 + lam * sum_{k>=2} |c_k| with the squared
    norm taken by trapezoid quadrature over `grid`; the first two elements
    are left unpenalized.  The solution path is warm-started from
    lambda_max down to `lam`.

    Returns (coefficients, converged).
    """
    if not lam > 0:
        raise ConfigError("lambda must be positive")
    q = np.asarray(q, dtype=float)
    if grid is None:
        grid = np.arange(1, q.size + 1) / (q.size + 1)
    xs, sw, _ = _design(dict_values, grid) if cache is None else (cache.xs, np.sqrt(trapezoid_weights(grid)), None)
    cache = cache or GramCache(xs)
    problem = LassoProblem(cache, sw * q)
    beta = _unpenalized_fit(problem)
    lmax = lambda_max(problem)
    converged = True
    if lam < lmax:
        for l in np.geomspace(lmax, lam, max(2, int(np.ceil(np.log10(lmax / lam) * 20)) + 1)):
            beta, ok = _solve(problem, l, beta, tol, max_sweeps, trace)
            converged &= ok
    if not converged:
        warnings.warn("coordinate descent hit the sweep cap before converging", RuntimeWarning)
    return beta, converged


def interleaved_folds(n_points: int, n_folds: int = N_FOLDS) -> list[np.ndarray]:
    if n_folds < 2:
        raise ConfigError("cross validation needs at least 2 folds")
    if n_points < 2 * n_folds:
        raise ConfigError(f"grid of {n_points} points is too short for {n_folds} folds")
    idx = np.arange(n_points)
    return [idx[idx % n_folds == f] for f in range(n_folds)]


def _path_fit(problem: LassoProblem, lambdas, tol, max_sweeps):
    beta = _unpenalized_fit(problem)
    out = np.zeros((len(lambdas), problem.cache.n_features))
    converged = True
    for t, lam in enumerate(lambdas):
        beta, ok = _solve(problem, lam, beta, tol, max_sweeps)
        converged &= ok
        out[t] = beta
    return out, converged


def cv_lambda(q: np.ndarray, dict_values: Optional[np.ndarray], grid: np.ndarray, n_folds: int = N_FOLDS,
              lambdas: Optional[np.ndarray] = None, seed: Optional[int] = None,
              cache: Optional[GramCache] = None, tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS,
              return_path: bool = False):
    """Choose the Lasso penalty by K-fold cross validation over interleaved grid folds.

    Fold f holds out grid points j with j % n_folds == f, so every fold spans
    the whole probability range.  The fold assignment is deterministic; `seed`
    is accepted for interface symmetry and not consumed.
    """
    q = np.asarray(q, dtype=float)
    folds = interleaved_folds(q.size, n_folds)
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    if cache is None:
        cache = GramCache(dict_values * sw[None, :])
    ys = sw * q
    full = LassoProblem(cache, ys)
    if lambdas is None:
        lambdas = lambda_path(lambda_max(full))
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.size < 2 or np.any(lambdas <= 0):
        raise ConfigError("lambda path must hold at least two positive values")
    errors = np.zeros(lambdas.size)
    for held in folds:
        train_w = w.sum() - w[held].sum()
        prob = LassoProblem(cache, ys, held=held, scale=1.0 / train_w)
        betas, _ = _path_fit(prob, lambdas, tol, max_sweeps)
        # xs rows carry sqrt(w); held-out residuals are weighted the same way
        pred = betas @ cache.xs[:, held]
        resid = pred - ys[held][None, :]
        errors += (resid**2).sum(axis=1) / w[held].sum()
    errors /= len(folds)
    best = int(np.argmin(errors))
    if return_path:
        return float(lambdas[best]), errors, lambdas
    return float(lambdas[best])


def select_subject(subject_id, q: np.ndarray, grid: np.ndarray, cache: GramCache,
                   n_folds: int = N_FOLDS, tol: float = CD_TOL, max_sweeps: int = CD_MAX_SWEEPS) -> SelectionResult:
    lam, errors, lambdas = cv_lambda(q, None, grid, n_folds=n_folds, cache=cache, tol=tol,
                                     max_sweeps=max_sweeps, return_path=True)
    sw = np.sqrt(trapezoid_weights(grid))
    problem = LassoProblem(cache, sw * np.asarray(q, dtype=float))
    path = lambdas[lambdas >= lam]
    betas, converged = _path_fit(problem, path, tol, max_sweeps)
    return SelectionResult(subject_id, lam, betas[-1], converged, errors, lambdas)


def select_all(subjects: Sequence[tuple], caches: Sequence[GramCache], n_folds: int = N_FOLDS,
               threads: int = 1, **kw) -> list[SelectionResult]:
    """Run `select_subject` for each (subject_id, q, grid); caches align with subjects."""
    def one(args):
        (sid, q, grid), cache = args
        return select_subject(sid, q, grid, cache, n_folds=n_folds, **kw)

    pairs = list(zip(subjects, caches))
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(one, pairs))
    return [one(p) for p in pairs]


def union_counts(selections: Sequence[SelectionResult], n_elements: int) -> np.ndarray:
    """c_k = number of subjects whose Lasso fit uses element k (k >= 2)."""
    counts = np.zeros(n_elements, dtype=np.int64)
    for s in selections:
        counts[s.selected_beta] += 1
    return counts


def reduced_set(counts: np.ndarray, threshold: int) -> np.ndarray:
    """Gaussian pair plus every element selected at least `threshold` times."""
    beta = np.flatnonzero(counts >= threshold)
    beta = beta[beta >= 2]
    return np.concatenate([np.asarray(UNPENALIZED), beta])


def concordance(y: np.ndarray, yhat: np.ndarray, w: np.ndarray) -> float:
    """Lin's concordance correlation under the quadrature measure `w`."""
    ey, eh = w @ y, w @ yhat
    vy = w @ (y - ey) ** 2
    vh = w @ (yhat - eh) ** 2
    cov = w @ ((y - ey) * (yhat - eh))
    den = vy + vh + (ey - eh) ** 2
    if den <= 0:
        return 1.0
    return float(np.clip(2.0 * cov / den, 0.0, 1.0))


def _pivoted_projection(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Projection of y onto the column span of A via QR with column pivoting."""
    Q, R, _ = qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.zeros_like(y)
    rank = int(np.sum(d > QR_RANK_TOL * d[0]))
    Qr = Q[:, :rank]
    return Qr @ (Qr.T @ y)


def loo_ccc(i: int, threshold: int, selections: Sequence[SelectionResult], dict_values: np.ndarray,
            q: np.ndarray, grid: np.ndarray) -> float:
    """Concordance of subject i with its projection on the basis built without subject i.

    `dict_values` holds every dictionary element on subject i's grid.
    """
    counts = union_counts(selections, dict_values.shape[0])
    counts[selections[i].selected_beta] -= 1
    idx = reduced_set(counts, threshold)
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    yhat = _pivoted_projection((dict_values[idx] * sw[None, :]).T, sw * q) / sw
    return concordance(q, yhat, w)


class _IncrementalBasis:
    """Orthonormal basis grown block by block (two-pass block Gram-Schmidt + pivoted QR)."""

    def __init__(self, n_rows: int):
        self.Q = np.zeros((n_rows, 0))
        self.full = False

    def add(self, B: np.ndarray):
        if self.full or B.shape[1] == 0:
            return
        scale = np.linalg.norm(B, axis=0).max()
        if scale == 0:
            return
        for _ in range(2):
            if self.Q.shape[1]:
                B = B - self.Q @ (self.Q.T @ B)
        Qb, R, _ = qr(B, mode="economic", pivoting=True)
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > np.sqrt(QR_RANK_TOL) * scale))
        if rank:
            Qb = Qb[:, :rank]
            if self.Q.shape[1]:
                Qb = Qb - self.Q @ (self.Q.T @ Qb)
                Qb, _ = np.linalg.qr(Qb)
            self.Q = np.hstack([self.Q, Qb])
        if self.Q.shape[1] >= self.Q.shape[0]:
            self.full = True

    def project(self, y):
        return self.Q @ (self.Q.T @ y)


def losslessness_curve(subjects: Sequence[tuple], selections: Sequence[SelectionResult],
                       evaluate, n_elements: int, thresholds: Optional[Sequence[int]] = None) -> LosslessnessCurve:
    """rho_(i) for every subject and every threshold C = 1..n-1.

    `subjects` holds (subject_id, q, grid); `evaluate(i, index)` returns the
    requested dictionary rows on subject i's grid.
    """
    n = len(selections)
    if thresholds is None:
        thresholds = np.arange(1, max(n, 2))
    thresholds = np.asarray(thresholds, dtype=np.int64)
    counts = union_counts(selections, n_elements)
    rho = np.zeros((thresholds.size, n))
    for i, (sid, q, grid) in enumerate(subjects):
        c_i = counts.copy()
        c_i[selections[i].selected_beta] -= 1
        union = np.flatnonzero(c_i >= thresholds.min())
        union = union[union >= 2]
        w = trapezoid_weights(grid)
        sw = np.sqrt(w)
        ys = sw * np.asarray(q, dtype=float)
        rows = np.concatenate([np.asarray(UNPENALIZED), union])
        vals = evaluate(i, rows) * sw[None, :]
        col_of = {int(k): r for r, k in enumerate(rows)}
        basis = _IncrementalBasis(ys.size)
        basis.add(vals[:2].T)
        added = set()
        # descending thresholds give nested, growing bases
        for t in np.argsort(-thresholds, kind="stable"):
            members = union[c_i[union] >= thresholds[t]]
            new = [col_of[int(k)] for k in members if int(k) not in added]
            added.update(int(k) for k in members)
            if new:
                basis.add(vals[new].T)
            rho[t, i] = concordance(q, basis.project(ys) / sw, w)
    K = np.array([reduced_set(counts, c).size for c in thresholds])
    return LosslessnessCurve(thresholds, K, rho.min(axis=1), rho.mean(axis=1), rho)


def choose_threshold(curve: LosslessnessCurve, epsilon: float = 0.01) -> tuple[int, int]:
    """Sparsest threshold whose worst-case concordance exceeds 1 - epsilon."""
    ok = np.flatnonzero(curve.rho_min > 1.0 - epsilon)
    if ok.size == 0:
        warnings.warn(f"no threshold reaches rho0 > {1 - epsilon}; falling back to C = 1", RuntimeWarning)
        t = int(np.flatnonzero(curve.thresholds == 1)[0]) if np.any(curve.thresholds == 1) else 0
        return int(curve.thresholds[t]), int(curve.K[t])
    t = ok[np.argmax(curve.thresholds[ok])]
    return int(curve.thresholds[t]), int(curve.K[t])
