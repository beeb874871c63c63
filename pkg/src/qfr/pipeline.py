"""In-memory stages shared by the CLI and the simulation harness."""
from __future__ import annotations

import hashlib
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dictionary import DEFAULT_BOUNDS, DEFAULT_K_OVER, Dictionary, dictionary_cache_key, make_dictionary
from .eqf import (EmpiricalQuantileFunction, eqf_grid, modeling_delta, reference_grid, resample_to_grid,
                  trapezoid_weights)
from .errors import ConfigError
from .quantlets import QuantletBasis, QuantletCoefficients, build_basis, coefficients_matrix
from .selection import (CD_TOL, N_FOLDS, GramCache, LosslessnessCurve, SelectionResult, choose_threshold,
                        losslessness_curve, reduced_set, select_subject, union_counts)

log = logging.getLogger(__name__)

# grids closer than this are treated as the reference grid
GRID_MATCH_TOL = 1e-13


def derive_seed(root, label: str) -> int:
    """Stable 63-bit seed for a named stage, derived from the root seed."""
    digest = hashlib.sha256(f"{root}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


@dataclass
class BasisConfig:
    k_over: int = DEFAULT_K_OVER
    theta_bounds: tuple = DEFAULT_BOUNDS
    seed: int = 0
    epsilon: float = 0.01
    n_folds: int = N_FOLDS
    grid_size: int = 1024
    denoise: bool = True
    threads: int = 1
    tol: float = CD_TOL

    def __post_init__(self):
        if self.k_over < 1:
            raise ConfigError("k_over must be at least 1")
        if not 0.0 < self.epsilon < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.grid_size < 2 * self.n_folds or self.grid_size & (self.grid_size - 1):
            raise ConfigError("grid_size must be a power of two of at least 2 * n_folds")
        if self.threads < 1:
            raise ConfigError("threads must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["theta_bounds"] = [list(map(float, b)) for b in np.atleast_2d(self.theta_bounds)]
        return d


@dataclass
class BasisStage:
    delta: float
    grid: np.ndarray
    dictionary: Dictionary
    subjects: list  # (subject_id, q on own restricted grid, grid)
    q_ref: np.ndarray
    selections: list
    curve: LosslessnessCurve
    threshold: int
    K_C: int
    reduced: np.ndarray
    dset: np.ndarray
    basis: QuantletBasis
    coefficients: QuantletCoefficients
    rho0: float = field(default=float("nan"))


_DICT_CACHE: dict = {}


def cached_dictionary(k_over, theta_bounds, grid, seed):
    """Dictionary plus its reference-grid Gram cache; the most recent one is kept in memory."""
    key = dictionary_cache_key(k_over, theta_bounds, grid, seed)
    hit = _DICT_CACHE.get(key)
    if hit is None:
        _DICT_CACHE.clear()
        d = make_dictionary(k_over, theta_bounds, grid, seed)
        sw = np.sqrt(trapezoid_weights(grid))
        hit = (d, GramCache(d.values * sw[None, :]))
        _DICT_CACHE[key] = hit
    return hit


def clear_cache():
    _DICT_CACHE.clear()


def restrict_to_range(eqf: EmpiricalQuantileFunction, delta: float):
    """Grid points of one EQF inside [delta, 1 - delta] and the values there."""
    g = eqf_grid(eqf.m)
    keep = (g >= delta - 1e-15) & (g <= 1.0 - delta + 1e-15)
    return eqf.values[keep], g[keep]


def common_grid_data(eqfs: Sequence[EmpiricalQuantileFunction], grid_size: int = 1024):
    """Reference grid, subjects on their own grids, and every subject on the reference grid."""
    delta = modeling_delta([e.m for e in eqfs])
    grid = reference_grid(delta, grid_size)
    subjects = []
    rows = []
    for e in eqfs:
        q, g = restrict_to_range(e, delta)
        if g.shape == grid.shape and np.allclose(g, grid, rtol=0, atol=GRID_MATCH_TOL):
            g = grid
        subjects.append((e.subject_id, q, g))
        rows.append(resample_to_grid(e, grid))
    return grid, np.vstack(rows), subjects


def _on_grid(grid, ref) -> bool:
    return grid is ref or (grid.shape == ref.shape and np.allclose(grid, ref, rtol=0, atol=GRID_MATCH_TOL))


def run_selection(subjects, dictionary: Dictionary, ref_cache: GramCache, cfg: BasisConfig) -> list:
    """Per-subject cross-validated Lasso; subjects off the reference grid get their own Gram cache."""
    grid = dictionary.grid

    def one(s):
        sid, q, g = s
        if _on_grid(g, grid):
            cache = ref_cache
        else:
            sw = np.sqrt(trapezoid_weights(g))
            cache = GramCache(dictionary.evaluate(g) * sw[None, :])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = select_subject(sid, q, g, cache, n_folds=cfg.n_folds, tol=cfg.tol)
        if not res.converged:
            log.warning("Lasso for subject %r stopped at the sweep cap", sid)
        return res

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            return list(ex.map(one, subjects))
    return [one(s) for s in subjects]


def build_basis_stage(eqfs: Sequence[EmpiricalQuantileFunction], cfg: BasisConfig,
                      selections: Optional[Sequence[SelectionResult]] = None) -> BasisStage:
    """EQFs to quantlet basis: dictionary, selection, losslessness curve, threshold, basis, coefficients."""
    grid, q_ref, subjects = common_grid_data(eqfs, cfg.grid_size)
    delta = float(grid[0])
    dictionary, ref_cache = cached_dictionary(cfg.k_over, cfg.theta_bounds, grid, cfg.seed)
    if selections is None:
        selections = run_selection(subjects, dictionary, ref_cache, cfg)
    n_el = len(dictionary)

    def evaluate(i, rows):
        g = subjects[i][2]
        if _on_grid(g, grid):
            return dictionary.values[rows]
        return dictionary.evaluate(g, rows)

    curve = losslessness_curve(subjects, selections, evaluate, n_el)
    C, K_C = choose_threshold(curve, cfg.epsilon)
    rho0 = float(curve.rho_min[np.flatnonzero(curve.thresholds == C)[0]])
    counts = union_counts(selections, n_el)
    reduced = reduced_set(counts, C)
    dset = dictionary.values[reduced]
    prov = {"threshold": C, "K_C": K_C, "rho0": rho0, "epsilon": cfg.epsilon,
            "dictionary": dictionary.manifest(), "denoise": cfg.denoise}
    basis = build_basis(dset, reduced, grid, q_ref, prov, denoise=cfg.denoise)
    coefs = coefficients_matrix(subjects, basis)
    low = coefs.ccc < 1.0 - cfg.epsilon
    if low.any():
        log.warning("%d subjects reconstruct with concordance below 1 - epsilon", int(low.sum()))
    log.info("basis: C=%d, K_C=%d, K=%d, rho0=%.4f", C, K_C, basis.K, rho0)
    return BasisStage(delta, grid, dictionary, subjects, q_ref, list(selections), curve, C, K_C,
                      reduced, dset, basis, coefs, rho0)
