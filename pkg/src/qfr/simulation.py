"""Synthetic two-scenario benchmark: data generation, truth, and method comparison."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.signal import lfilter
from scipy.stats import norm, skewnorm

from .eqf import EmpiricalQuantileFunction, SampleSet, build_eqf
from .errors import ConfigError, UnsupportedMethodError

log = logging.getLogger(__name__)

SCENARIO_SKEW = "skew-normal"
SCENARIO_MULTIMODAL = "multimodal"
_SCENARIO_ALIASES = {"1": SCENARIO_SKEW, "skew-normal": SCENARIO_SKEW, "skew": SCENARIO_SKEW,
                     "2": SCENARIO_MULTIMODAL, "multimodal": SCENARIO_MULTIMODAL}


@dataclass(frozen=True)
class Component:
    """Skew-normal component (eta, omega, alpha); alpha = 0 is Normal(eta, omega^2)."""

    eta: float
    omega: float
    alpha: float = 0.0

    @property
    def delta(self) -> float:
        return self.alpha / math.sqrt(1.0 + self.alpha**2)

    def cdf(self, x):
        if self.alpha == 0:
            return norm.cdf(x, self.eta, self.omega)
        return skewnorm.cdf(x, self.alpha, self.eta, self.omega)

    def ppf(self, p):
        if self.alpha == 0:
            return norm.ppf(p, self.eta, self.omega)
        return skewnorm.ppf(p, self.alpha, self.eta, self.omega)

    def moments(self):
        """(mean, variance, skewness, excess kurtosis) in closed form."""
        d = self.delta
        b = math.sqrt(2.0 / math.pi)
        mean = self.eta + self.omega * d * b
        var = self.omega**2 * (1.0 - (d * b) ** 2)
        skew = (4.0 - math.pi) / 2.0 * (d * b) ** 3 / (1.0 - (d * b) ** 2) ** 1.5
        exk = 2.0 * (math.pi - 3.0) * (d * b) ** 4 / (1.0 - (d * b) ** 2) ** 2
        return mean, var, skew, exk


@dataclass(frozen=True)
class Mixture:
    components: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.components) != len(self.weights) or not math.isclose(sum(self.weights), 1.0):
            raise ConfigError("mixture weights must match components and sum to one")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return sum(w * c.cdf(x) for c, w in zip(self.components, self.weights))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        which = rng.choice(len(self.components), size=count, p=np.asarray(self.weights))
        out = np.empty(count)
        for j, c in enumerate(self.components):
            idx = np.flatnonzero(which == j)
            out[idx] = sample_skew_normal(c.eta, c.omega, c.alpha, idx.size, rng)
        return out

    def quantile(self, p, tol: float = 1e-10) -> np.ndarray:
        """Population quantile function by vectorized bisection on the mixture CDF."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if np.any((p <= 0) | (p >= 1)):
            raise ConfigError("quantiles are defined for p in (0, 1)")
        if len(self.components) == 1:
            return np.asarray(self.components[0].ppf(p), dtype=float)
        lo = np.min([c.ppf(p) for c in self.components], axis=0)
        hi = np.max([c.ppf(p) for c in self.components], axis=0)
        lo, hi = lo - 1e-9, hi + 1e-9
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.max(hi - lo) < tol:
                break
        return 0.5 * (lo + hi)

    def moments(self):
        """(mean, sd, skewness, kurtosis) from component raw moments."""
        raw = np.zeros(5)
        for c, w in zip(self.components, self.weights):
            raw += w * _component_raw_moments(c)
        mean = raw[1]
        var = raw[2] - mean**2
        m3 = raw[3] - 3 * mean * raw[2] + 2 * mean**3
        m4 = raw[4] - 4 * mean * raw[3] + 6 * mean**2 * raw[2] - 3 * mean**4
        return mean, math.sqrt(var), m3 / var**1.5, m4 / var**2


def _component_raw_moments(c: Component) -> np.ndarray:
    # E[X^r] for X = eta + omega*Z, Z standard skew normal, r = 0..4
    d = c.delta
    b = math.sqrt(2.0 / math.pi)
    ez = [1.0, b * d, 1.0, b * d * (3.0 - d**2), 3.0]
    out = np.zeros(5)
    for r in range(5):
        out[r] = sum(math.comb(r, j) * c.eta ** (r - j) * c.omega**j * ez[j] for j in range(r + 1))
    return out


SCENARIOS = {
    SCENARIO_SKEW: (
        Mixture((Component(1.0, 5.0, 0.0),), (1.0,)),
        Mixture((Component(3.0, 5.0, 0.0),), (1.0,)),
        Mixture((Component(1.0, 6.5, 0.0),), (1.0,)),
        Mixture((Component(9.11, 7.89, -4.0),), (1.0,)),
    ),
    SCENARIO_MULTIMODAL: (
        Mixture((Component(-3.06, 3.67, 0.0), Component(9.11, 7.89, -4.0)), (0.5, 0.5)),
        Mixture((Component(-7.1, 2.4, 0.0), Component(-3.11, 7.89, 4.0)), (0.3, 0.7)),
        Mixture((Component(-2.5, 2.5), Component(4.0, 3.0), Component(9.5, 2.1)), (0.3, 0.5, 0.2)),
        Mixture((Component(-2.5, 1.5), Component(4.0, 3.56), Component(9.5, 1.1)), (0.3, 0.5, 0.2)),
    ),
}

# (moment, group i, group j, equal in truth); groups are 1-based
HYPOTHESES = {
    SCENARIO_SKEW: (
        ("mu", 1, 3, True), ("mu", 2, 4, True), ("sigma", 1, 3, False),
        ("sigma", 2, 4, True), ("xi", 1, 3, True), ("xi", 2, 4, False),
    ),
    SCENARIO_MULTIMODAL: (
        ("mu", 1, 2, True), ("mu", 3, 4, True), ("sigma", 1, 2, False),
        ("sigma", 3, 4, True), ("xi", 1, 2, False),
    ),
}

MONOTONE_EPSILONS = {SCENARIO_SKEW: (0.001, 0.01), SCENARIO_MULTIMODAL: (0.03, 0.05)}


def scenario_id(name) -> str:
    key = str(name).lower()
    if key not in _SCENARIO_ALIASES:
        raise ConfigError(f"unknown scenario {name!r}")
    return _SCENARIO_ALIASES[key]


@dataclass
class ScenarioConfig:
    scenario: str = SCENARIO_SKEW
    n_per_group: int = 10
    m: int = 1024
    ou_base: float = 0.9
    seed: int = 0
    noise_sd: float = 1.0

    def __post_init__(self):
        self.scenario = scenario_id(self.scenario)
        if self.m < 2 or self.m & (self.m - 1):
            raise ConfigError("m must be a power of two")
        if self.n_per_group < 2:
            raise ConfigError("n_per_group must be at least 2")
        if not 0.0 <= self.ou_base < 1.0:
            raise ConfigError("OU correlation base must lie in [0, 1)")
        if not self.noise_sd >= 0:
            raise ConfigError("noise_sd must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_skew_normal(eta: float, omega: float, alpha: float, count: int, seed=None) -> np.ndarray:
    """Skew-normal draws from the representation Z = delta|U0| + sqrt(1 - delta^2) U1."""
    if not omega > 0:
        raise ConfigError("omega must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = alpha / math.sqrt(1.0 + alpha**2)
    u0 = rng.standard_normal(count)
    u1 = rng.standard_normal(count)
    z = d * np.abs(u0) + math.sqrt(1.0 - d * d) * u1
    return eta + omega * z


def ou_noise(m: int, base: float = 0.9, seed=None) -> np.ndarray:
    """Stationary unit-variance AR(1) path on p_j = j/(m+1) with corr(p, p') = base^|p - p'|."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    phi = base ** (1.0 / (m + 1)) if base > 0 else 0.0
    e = rng.standard_normal(m)
    e[1:] *= math.sqrt(1.0 - phi * phi)
    return lfilter([1.0], [1.0, -phi], e)


def add_ou_noise(values: np.ndarray, base: float = 0.9, seed=None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values + ou_noise(values.size, base, seed)


def group_design(n_per_group: int, groups: int = 4) -> np.ndarray:
    """Intercept plus indicators for groups 2..G, subjects ordered by group."""
    n = n_per_group * groups
    X = np.zeros((n, groups))
    X[:, 0] = 1.0
    for g in range(1, groups):
        X[g * n_per_group:(g + 1) * n_per_group, g] = 1.0
    return X


@dataclass
class ScenarioData:
    config: ScenarioConfig
    samples: list  # SampleSet per subject (noisy, re-sorted values)
    eqfs: list
    X: np.ndarray
    groups: np.ndarray  # 1-based group of each subject
    mixtures: tuple


def generate(cfg: ScenarioConfig) -> ScenarioData:
    """Simulate subjects: sample m values, sort, add an OU path along p, re-sort."""
    mixtures = SCENARIOS[cfg.scenario]
    root = np.random.SeedSequence(cfg.seed)
    G = len(mixtures)
    streams = root.spawn(G * cfg.n_per_group)
    samples, eqfs, groups = [], [], []
    for g, mix in enumerate(mixtures):
        for j in range(cfg.n_per_group):
            rng = np.random.default_rng(streams[g * cfg.n_per_group + j])
            y = np.sort(mix.sample(cfg.m, rng))
            y = np.sort(y + cfg.noise_sd * ou_noise(cfg.m, cfg.ou_base, rng))
            sid = f"g{g + 1}_s{j + 1:02d}"
            s = SampleSet(sid, y)
            samples.append(s)
            eqfs.append(build_eqf(s))
            groups.append(g + 1)
    return ScenarioData(cfg, samples, eqfs, group_design(cfg.n_per_group, G), np.asarray(groups), mixtures)


def true_coefficients(mixtures: Sequence[Mixture], grid: np.ndarray) -> np.ndarray:
    """beta_1 = Q of group 1, beta_a = Q_a - Q_1; shape A x J."""
    Q = np.vstack([m.quantile(grid) for m in mixtures])
    beta = Q.copy()
    beta[1:] -= Q[0]
    return beta


def monotonicity_rows(count: int = 30, A: int = 4, seed=None) -> np.ndarray:
    """Covariate rows (1, u2, ..., uA) with u ~ U(0, 1)."""
    rng = np.random.default_rng(seed)
    rows = rng.random((count, A))
    rows[:, 0] = 1.0
    return rows


def group_rows(A: int = 4) -> np.ndarray:
    rows = np.zeros((A, A))
    rows[:, 0] = 1.0
    for g in range(1, A):
        rows[g, g] = 1.0
    return rows


@dataclass
class ComparisonTable:
    scenario: str
    seed: int
    bands: list = field(default_factory=list)  # dicts: method, coefficient, area, coverage, gbpv
    scores: list = field(default_factory=list)  # dicts: method, hypothesis, truth_equal, score
    monotonicity: list = field(default_factory=list)  # dicts: method, epsilon, rate
    gaussianity: list = field(default_factory=list)  # dicts: method, group, score, lower, upper
    basis: dict = field(default_factory=dict)

    def band(self, method: str, a: int) -> dict:
        for r in self.bands:
            if r["method"] == method and r["coefficient"] == a:
                return r
        raise KeyError((method, a))

    def score(self, method: str, hypothesis: str) -> float:
        for r in self.scores:
            if r["method"] == method and r["hypothesis"] == hypothesis:
                return r["score"]
        raise KeyError((method, hypothesis))

    def rate(self, method: str, epsilon: float) -> float:
        for r in self.monotonicity:
            if r["method"] == method and math.isclose(r["epsilon"], epsilon):
                return r["rate"]
        raise KeyError((method, epsilon))

    def gauss(self, method: str, group: int) -> dict:
        for r in self.gaussianity:
            if r["method"] == method and r["group"] == group:
                return r
        raise KeyError((method, group))


def hypothesis_label(h) -> str:
    moment, i, j, _ = h
    return f"{moment}{i}={moment}{j}"


def run_scenario(cfg: ScenarioConfig, methods: Sequence[str] = ("E",), basis_config=None,
                 mcmc_config: Optional[dict] = None, data: Optional[ScenarioData] = None,
                 basis_stage=None) -> ComparisonTable:
    """Generate data, build the quantlet basis once, fit each method and score it against the truth."""
    from . import inference as inf
    from .baselines import METHODS, FitData, MomentRegressionFit, fit_method
    from .mcmc import DesignMatrix
    from .pipeline import BasisConfig, build_basis_stage, derive_seed

    for mth in methods:
        if str(mth).upper() not in METHODS:
            raise UnsupportedMethodError(f"method {mth!r} is not available in the harness")
    data = data or generate(cfg)
    bcfg = basis_config or BasisConfig(seed=derive_seed(cfg.seed, "dictionary"))
    mcfg = dict(mcmc_config or {})
    mcfg.setdefault("seed", derive_seed(cfg.seed, "mcmc"))
    need_basis = any(str(m).upper() in ("E", "D", "F") for m in methods)
    stage = basis_stage
    if stage is None and need_basis:
        stage = build_basis_stage(data.eqfs, bcfg)
    if stage is not None:
        grid, q_ref, subjects = stage.grid, stage.q_ref, stage.subjects
    else:
        from .pipeline import common_grid_data
        grid, q_ref, subjects = common_grid_data(data.eqfs, bcfg.grid_size)
    X = DesignMatrix(data.X, ["intercept", "group2", "group3", "group4"][: data.X.shape[1]])
    fd = FitData(subjects, X, grid, q_ref, None if stage is None else stage.basis,
                 None if stage is None else stage.dset, [s.values for s in data.samples],
                 bcfg.epsilon)
    truth = true_coefficients(data.mixtures, grid)
    table = ComparisonTable(cfg.scenario, cfg.seed)
    if stage is not None:
        table.basis = {"C": stage.threshold, "K": stage.basis.K, "K_C": stage.K_C,
                       "rho0": float(stage.rho0)}
    mono_rows = monotonicity_rows(30, X.A, derive_seed(cfg.seed, "monotonicity"))
    grows = group_rows(X.A)
    for mth in methods:
        mth = str(mth).upper()
        res = fit_method(mth, fd, dict(mcfg, seed=derive_seed(mcfg["seed"], mth)))
        if isinstance(res.fit, MomentRegressionFit):
            mdraws = [res.fit.moments(r) for r in grows]
        else:
            fp = inf.to_data_space(res.fit, res.basis, grid)
            for a in range(X.A):
                band = inf.joint_bands(fp, a, 0.05)
                table.bands.append({
                    "method": mth, "coefficient": a + 1,
                    "area": inf.band_area(band, grid),
                    "coverage": inf.band_coverage(band, truth[a], grid),
                    "gbpv": inf.gbpv(inf.simbas(fp, a)),
                })
            mdraws = [inf.conditional_moments(fp, r) for r in grows]
            pm = np.einsum("ra,aj->rj", mono_rows, fp.draws.mean(axis=0))
            for eps in MONOTONE_EPSILONS[cfg.scenario]:
                _, rate = inf.epsilon_monotonicity(pm, eps)
                table.monotonicity.append({"method": mth, "epsilon": eps, "rate": rate})
            if mth in ("E", "D", "F"):
                for g, r in enumerate(grows, start=1):
                    gs = inf.gaussianity_score(res.fit, r)
                    table.gaussianity.append({"method": mth, "group": g, "score": gs.score,
                                              "lower": gs.lower, "upper": gs.upper})
        for h in HYPOTHESES[cfg.scenario]:
            moment, i, j, eq = h
            s = inf.moment_prob_score(mdraws[i - 1].get(moment), mdraws[j - 1].get(moment))
            table.scores.append({"method": mth, "hypothesis": hypothesis_label(h), "truth_equal": eq,
                                 "score": s})
    return table


GBM_COVARIATES = ("sex", "age", "dditt3", "egfr", "gli2", "kras")


def gbm_like_dataset(seed: int = 0, n: int = 64, m_range=(371, 3421)):
    """Synthetic stand-in for a tumour-intensity study: unequal sample sizes and 6 covariates.

    Returns (list of SampleSet, covariate matrix n x 6, covariate names).  Sex
    shifts location, age scales spread, two genes add skewness and a second mode.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    sizes = rng.integers(m_range[0], m_range[1] + 1, size=n)
    sizes[0], sizes[-1] = m_range
    sex = rng.integers(0, 2, n).astype(float)
    age = np.round(rng.normal(0.0, 1.0, n), 3)
    genes = rng.integers(0, 2, (n, 4)).astype(float)
    X = np.column_stack([sex, age, genes])
    samples = []
    for i in range(n):
        eta = 0.3 * sex[i] + 0.2 * genes[i, 0]
        omega = 1.0 + 0.15 * age[i] ** 2
        alpha = -3.0 * genes[i, 1]
        y = sample_skew_normal(eta, omega, alpha, int(sizes[i]), rng)
        if genes[i, 2]:
            k = int(0.2 * sizes[i])
            y[:k] = rng.normal(3.0, 0.5, k)
        samples.append(SampleSet(f"s{i + 1:02d}", y))
    return samples, X, list(GBM_COVARIATES)
