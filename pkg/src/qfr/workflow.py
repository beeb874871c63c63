"""Artifact-producing pipeline: run configuration, staged execution, and the index file."""
from __future__ import annotations

import json
import logging
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import inference as inf
from . import io
from .baselines import METHODS, FitData, MomentRegressionFit, fit_method, pca_basis
from .dictionary import DEFAULT_BOUNDS, DEFAULT_K_OVER
from .errors import ConfigError, MissingArtifactError, UnsupportedMethodError
from .mcmc import DEFAULT_BURN, DEFAULT_ITERS, DEFAULT_NU0, DesignMatrix, PosteriorFit
from .pipeline import BasisConfig, build_basis_stage, common_grid_data, derive_seed
from .quantlets import coefficients_matrix

log = logging.getLogger(__name__)

STAGES = ("eqf", "dictionary", "selection", "curve", "basis", "coefficients", "posterior", "inference", "plots")
BASIS_STAGES = STAGES[:5]
FIT_STAGES = ("coefficients", "posterior")
INFER_STAGES = ("inference", "plots")
INDEX_NAME = "index.json"
MOMENTS = ("mu", "sigma", "xi", "phi")


@dataclass
class RunConfig:
    samples: Optional[str] = None
    covariates: Optional[str] = None
    output: str = "qfr-output"
    seed: int = 0
    method: str = "E"
    threads: int = 1
    # dictionary
    k_over: int = DEFAULT_K_OVER
    theta_bounds: list = field(default_factory=lambda: [list(b) for b in DEFAULT_BOUNDS])
    dictionary_seed: Optional[int] = None
    # selection
    epsilon: float = 0.01
    folds: int = 10
    # basis
    grid_size: int = 1024
    wavelet: bool = True
    # mcmc
    iters: int = DEFAULT_ITERS
    burn: int = DEFAULT_BURN
    thin: int = 1
    nu0: float = DEFAULT_NU0
    H: Optional[int] = None
    # inference
    alpha: list = field(default_factory=lambda: [0.05])
    delta: Optional[float] = None
    monotone_eps: list = field(default_factory=lambda: [0.001, 0.01])
    contrasts: Optional[list] = None  # [{"name", "row1", "row2"}]; default per covariate
    plots: bool = True

    def validate(self) -> "RunConfig":
        if str(self.method).upper() not in METHODS:
            raise UnsupportedMethodError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        self.method = str(self.method).upper()
        if self.iters <= 0:
            raise ConfigError("iters must be positive")
        if not self.iters > self.burn >= 0:
            raise ConfigError("need iters > burn >= 0")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if not self.nu0 > 0:
            raise ConfigError("nu0 must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.k_over < 1:
            raise ConfigError("k_over must be at least 1")
        if not 0 < self.epsilon < 1:
            raise ConfigError("epsilon must lie in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.grid_size < 2 * self.folds or self.grid_size & (self.grid_size - 1):
            raise ConfigError("grid_size must be a power of two of at least 2 * folds")
        if any(not 0 < a < 1 for a in self.alpha) or not self.alpha:
            raise ConfigError("alpha levels must lie in (0, 1)")
        if any(e < 0 for e in self.monotone_eps):
            raise ConfigError("monotonicity epsilons must be non-negative")
        if self.H is not None and self.H < 2:
            raise ConfigError("H must be at least 2")
        for p in (self.samples, self.covariates):
            if p is not None and not Path(p).exists():
                raise ConfigError(f"input file {p} does not exist")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(extra))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(io.read_json(path))

    def to_dict(self) -> dict:
        return asdict(self)

    def basis_config(self) -> BasisConfig:
        seed = self.dictionary_seed if self.dictionary_seed is not None else derive_seed(self.seed, "dictionary")
        return BasisConfig(k_over=self.k_over, theta_bounds=tuple(map(tuple, self.theta_bounds)), seed=seed,
                           epsilon=self.epsilon, n_folds=self.folds, grid_size=self.grid_size,
                           denoise=self.wavelet, threads=self.threads)

    def mcmc_config(self) -> dict:
        return {"iters": self.iters, "burn": self.burn, "thin": self.thin, "nu0": self.nu0, "H": self.H,
                "seed": derive_seed(self.seed, f"mcmc/{self.method}")}


class Index:
    """index.json: per-stage status and every artifact with its sha256."""

    def __init__(self, out: Path, config: RunConfig):
        self.out = out
        self.path = out / INDEX_NAME
        self.data = {"schema": 1, "seed": config.seed, "method": config.method, "stages": {}, "artifacts": [],
                     "failed_stage": None}
        if self.path.exists():
            old = io.read_json(self.path)
            self.data["stages"] = old.get("stages", {})
            self.data["artifacts"] = old.get("artifacts", [])

    def start(self, stage: str):
        self.data["stages"][stage] = {"status": "running"}
        self.data["artifacts"] = [a for a in self.data["artifacts"] if a["stage"] != stage]

    def add(self, stage: str, paths: Sequence[Path]):
        for p in paths:
            p = Path(p)
            self.data["artifacts"].append({"stage": stage, "path": p.relative_to(self.out).as_posix(),
                                           "sha256": io.sha256_file(p)})

    def finish(self, stage: str, status: str = "complete", error: Optional[str] = None):
        self.data["stages"][stage] = {"status": status} if error is None else {"status": status, "error": error}
        if status == "failed":
            self.data["failed_stage"] = stage
        self.save()

    def save(self):
        self.data["artifacts"].sort(key=lambda a: (STAGES.index(a["stage"]) if a["stage"] in STAGES else 99,
                                                   a["path"]))
        io.write_json(self.path, self.data)

    def complete(self, stages: Sequence[str]) -> bool:
        return all(self.data["stages"].get(s, {}).get("status") == "complete" for s in stages)


class _State:
    """Objects passed between stages; each is loaded from disk when an earlier stage did not run."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.samples = None
        self.design: Optional[DesignMatrix] = None
        self.eqfs = None
        self.stage = None
        self.result = None

    def need_eqfs(self):
        if self.eqfs is None:
            cache = self.out / "eqf_cache.csv"
            if not cache.exists():
                raise MissingArtifactError("no EQF cache; run build-basis first or pass --samples")
            self.eqfs = io.read_eqf_cache(cache)
        return self.eqfs

    def need_design(self) -> DesignMatrix:
        if self.design is None:
            path = self.out / "design.csv"
            if self.cfg.covariates:
                _, self.design = io.ingest(self.cfg.samples or self.out / "eqf_cache.csv", self.cfg.covariates)
            elif path.exists():
                ids, names, X = io.read_covariates(path)
                self.design = DesignMatrix(X, names)
            else:
                raise MissingArtifactError("no design matrix; pass --covariates")
        return self.design


def _stage_eqf(st: _State):
    from .eqf import build_eqf
    cfg = st.cfg
    if not (cfg.samples and cfg.covariates):
        raise ConfigError("the eqf stage needs both a samples and a covariates CSV")
    st.samples, st.design = io.ingest(cfg.samples, cfg.covariates)
    st.eqfs = [build_eqf(s) for s in st.samples]
    ids = [s.subject_id for s in st.samples]
    return [io.write_eqf_cache(st.out / "eqf_cache.csv", st.eqfs),
            io.write_covariates(st.out / "design.csv", ids, st.design.X, st.design.names)]


def _stage_basis_all(st: _State, index: Index, stages: Sequence[str]):
    """dictionary, selection, curve and basis share one in-memory computation."""
    eqfs = st.need_eqfs()
    bcfg = st.cfg.basis_config()
    st.stage = stage = build_basis_stage(eqfs, bcfg)
    writers = {
        "dictionary": lambda: io.write_dictionary(st.out, stage.dictionary),
        "selection": lambda: [io.write_selection(st.out / "selection.csv", stage.selections)],
        "curve": lambda: [io.write_curve(st.out / "curve.csv", stage.curve)],
        "basis": lambda: io.write_basis(st.out, _with_reduced(stage)),
    }
    return writers


def _with_reduced(stage):
    b = stage.basis
    b.provenance = dict(b.provenance, reduced=[int(i) for i in stage.reduced])
    return b


def _fit_data(st: _State) -> FitData:
    from .io import read_basis
    eqfs = st.need_eqfs()
    X = st.need_design()
    cfg = st.cfg
    if st.stage is not None:
        s = st.stage
        return FitData(s.subjects, X, s.grid, s.q_ref, s.basis, s.dset, [e.values for e in eqfs], cfg.epsilon)
    grid, q_ref, subjects = common_grid_data(eqfs, cfg.grid_size)
    basis = dset = None
    if (st.out / "basis.json").exists():
        basis = read_basis(st.out)
        vals = st.out / "dictionary_values.npy"
        if vals.exists() and "reduced" in basis.provenance:
            dset = np.load(vals)[np.asarray(basis.provenance["reduced"], dtype=np.int64)]
    elif cfg.method in ("E", "D", "F"):
        raise MissingArtifactError(f"method {cfg.method} needs basis artifacts; run build-basis first")
    return FitData(subjects, X, grid, q_ref, basis, dset, [e.values for e in eqfs], cfg.epsilon)


def _stage_coefficients(st: _State):
    data = _fit_data(st)
    st.fitdata = data
    if data.basis is None:
        return []
    coefs = coefficients_matrix(data.subjects, data.basis)
    return [io.write_coefficients(st.out / "coefficients.csv", coefs)]


def _stage_posterior(st: _State):
    data = getattr(st, "fitdata", None) or _fit_data(st)
    cfg = st.cfg
    res = fit_method(cfg.method, data, cfg.mcmc_config())
    st.result = res
    fit = res.fit.fit if isinstance(res.fit, MomentRegressionFit) else res.fit
    paths = io.write_posterior(st.out, fit, data.X.names)
    model = {"method": cfg.method, "kind": _model_kind(res), "names": data.X.names}
    if model["kind"] in ("pca", "quantlet-subset", "quantlet"):
        b = res.basis
        p = io.write_basis(st.out / "model", b)
        paths += p
        model["basis"] = "model"
    paths.append(io.write_json(st.out / "model.json", model))
    return paths


def _model_kind(res) -> str:
    if isinstance(res.fit, MomentRegressionFit):
        return "moments"
    if getattr(res.basis, "is_identity", False):
        return "identity"
    if res.method == "C":
        return "pca"
    if res.method == "F":
        return "quantlet-subset"
    return "quantlet"


def _load_model(st: _State):
    """(fit, basis or None, names, kind) from memory or from posterior artifacts."""
    from .inference import IdentityBasis
    if st.result is not None:
        res = st.result
        return res.fit, res.basis, st.need_design().names, _model_kind(res)
    if not (st.out / "posterior.json").exists() or not (st.out / "model.json").exists():
        raise MissingArtifactError("no posterior artifacts; run fit first")
    fit, names = io.read_posterior(st.out)
    model = io.read_json(st.out / "model.json")
    kind = model["kind"]
    if kind == "identity":
        eqfs = st.need_eqfs()
        grid, _, _ = common_grid_data(eqfs, st.cfg.grid_size)
        basis = IdentityBasis(grid)
    elif kind == "moments":
        basis = None
        fit = MomentRegressionFit(fit, np.zeros((0, 4)))
    else:
        basis = io.read_basis(st.out / model["basis"])
    return fit, basis, names, kind


def default_contrasts(X: DesignMatrix) -> list:
    """For each non-intercept covariate: mean row with that covariate at its high vs low value."""
    base = X.X.mean(axis=0)
    out = []
    for a, (name, kind) in enumerate(zip(X.names, X.kinds)):
        if kind == "intercept":
            continue
        col = X.X[:, a]
        lo, hi = (0.0, 1.0) if kind == "binary" else tuple(np.quantile(col, [0.25, 0.75]))
        r1, r2 = base.copy(), base.copy()
        r1[a], r2[a] = hi, lo
        out.append({"name": name, "row1": r1.tolist(), "row2": r2.tolist()})
    return out


def _stage_inference(st: _State):
    cfg = st.cfg
    fit, basis, names, kind = _load_model(st)
    X = st.need_design()
    contrasts = cfg.contrasts if cfg.contrasts is not None else default_contrasts(X)
    report = {"method": cfg.method, "kind": kind, "M": fit.M, "coefficients": {}, "contrasts": [],
              "gaussianity": [], "pdf": [], "monotonicity": []}
    paths = []
    mean_row = X.X.mean(axis=0)
    if kind == "moments":
        for c in contrasts:
            d1, d2 = fit.moments(c["row1"]), fit.moments(c["row2"])
            report["contrasts"].append({"name": c["name"], **{m: inf.moment_prob_score(d1.get(m), d2.get(m))
                                                              for m in MOMENTS}})
        paths.append(io.write_json(st.out / "report.json", report))
        st.report = report
        return paths
    eqfs = st.need_eqfs()
    grid, _, _ = common_grid_data(eqfs, cfg.grid_size)
    fp = inf.to_data_space(fit, basis, grid)
    bands, curves = {}, {}
    for a, name in enumerate(names):
        entry = {}
        for alpha in cfg.alpha:
            b = inf.joint_bands(fp, a, alpha)
            entry[f"alpha={alpha!r}"] = {"q": b.q, "area": inf.band_area(b, grid), "excluded": b.excluded}
            if alpha == cfg.alpha[0]:
                bands[name] = b
        curves[name] = inf.simbas(fp, a)
        entry["gbpv"] = inf.gbpv(curves[name])
        report["coefficients"][name] = entry
    for c in contrasts:
        d1 = inf.conditional_moments(fp, c["row1"])
        d2 = inf.conditional_moments(fp, c["row2"])
        row = {"name": c["name"]}
        for m in MOMENTS:
            row[m] = inf.moment_prob_score(d1.get(m), d2.get(m))
        row["excluded"] = d1.excluded + d2.excluded
        report["contrasts"].append(row)
    rows = {"mean": mean_row}
    for c in contrasts:
        rows[f"{c['name']}:row1"] = np.asarray(c["row1"], dtype=float)
        rows[f"{c['name']}:row2"] = np.asarray(c["row2"], dtype=float)
    if kind in ("quantlet", "quantlet-subset", "pca"):
        for rn, r in rows.items():
            g = inf.gaussianity_score(fit, r)
            report["gaussianity"].append({"row": rn, "score": g.score, "lower": g.lower, "upper": g.upper,
                                          "excluded": g.excluded})
    pdfs = {}
    for rn, r in rows.items():
        t = inf.predicted_pdf_cdf(fp, r, cfg.delta)
        pdfs[rn] = t
        report["pdf"].append({"row": rn, "degenerate": t.degenerate, "omitted": t.omitted,
                              "mass": inf.riemann_mass(t)})
    pm = fp.draws.mean(axis=0)
    qhat = np.vstack([r @ pm for r in X.X])
    for eps in cfg.monotone_eps:
        _, rate = inf.epsilon_monotonicity(qhat, eps)
        report["monotonicity"].append({"epsilon": eps, "rate": rate})
    paths.append(io.write_json(st.out / "report.json", report))
    paths.append(io.write_bands(st.out / "bands.csv", bands, grid))
    paths.append(io.write_simbas(st.out / "simbas.csv", curves, grid))
    paths.append(io.write_pdf(st.out / "pdf.csv", pdfs))
    st.inference = (grid, bands, curves, pdfs)
    return paths


def _stage_plots(st: _State):
    if not st.cfg.plots:
        return []
    from . import plots
    if getattr(st, "inference", None) is None:
        return []
    grid, bands, curves, pdfs = st.inference
    return plots.write_all(st.out, grid, bands, curves, pdfs)


def run_stages(cfg: RunConfig, stages: Sequence[str]) -> tuple[bool, Path]:
    """Run the requested stages in order; returns (all complete, output directory)."""
    cfg.validate()
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    index = Index(out, cfg)
    io.write_json(out / "config.json", cfg.to_dict())
    st = _State(cfg, out)
    stages = [s for s in STAGES if s in stages]
    basis_writers = None
    for s in stages:
        index.start(s)
        try:
            if s == "eqf":
                paths = _stage_eqf(st)
            elif s in BASIS_STAGES:
                if basis_writers is None:
                    basis_writers = _stage_basis_all(st, index, stages)
                paths = basis_writers[s]()
            elif s == "coefficients":
                paths = _stage_coefficients(st)
            elif s == "posterior":
                paths = _stage_posterior(st)
            elif s == "inference":
                paths = _stage_inference(st)
            else:
                paths = _stage_plots(st)
            index.add(s, paths)
            index.finish(s)
        except Exception as exc:  # the index records the failure, the caller reports it
            log.debug("stage %s failed:\n%s", s, traceback.format_exc())
            index.finish(s, "failed", f"{type(exc).__name__}: {exc}")
            for rest in stages[stages.index(s) + 1:]:
                index.data["stages"][rest] = {"status": "skipped"}
            index.save()
            st.error = exc
            return False, out
    index.save()
    return index.complete(stages), out


def run_pipeline(cfg: RunConfig) -> Path:
    ok, out = run_stages(cfg, STAGES)
    return out
