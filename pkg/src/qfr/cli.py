"""Command-line entry point: qfr {build-basis,fit,infer,report,run,simulate}."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

from . import io
from .errors import QFRError
from .workflow import BASIS_STAGES, FIT_STAGES, INDEX_NAME, INFER_STAGES, STAGES, RunConfig, run_stages

log = logging.getLogger("qfr")

EXIT_OK = 0
EXIT_STAGE_FAILED = 1
EXIT_USAGE = 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="run configuration JSON")
    p.add_argument("--seed", type=int, help="root seed for every random stream")
    p.add_argument("--method", choices=list("EDCBFG"), help="fitting method (default E)")
    p.add_argument("--output", type=Path, help="artifact directory")
    p.add_argument("--threads", type=int, help="worker threads for per-subject work")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _data_args(p: argparse.ArgumentParser):
    p.add_argument("--samples", type=Path, help="CSV with columns subject_id,value")
    p.add_argument("--covariates", type=Path, help="CSV with columns subject_id,<name>,...")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qfr", description="Quantile functional regression with quantlets.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("build-basis", "EQFs, dictionary, selection, losslessness curve and quantlet basis"),
                           ("fit", "quantlet coefficients and posterior draws"),
                           ("infer", "bands, SimBaS, moment scores and densities from posterior draws"),
                           ("run", "every stage in order")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _data_args(p)
        if name in ("infer", "run"):
            p.add_argument("--no-plots", action="store_true", help="skip SVG plots")
    p = sub.add_parser("report", help="print a summary of an inference report")
    _common(p)
    p = sub.add_parser("simulate", help="run the synthetic benchmark and write comparison tables")
    _common(p)
    p.add_argument("--scenario", required=True, help="1 (skew-normal) or 2 (multimodal)")
    p.add_argument("--methods", help="comma-separated methods, e.g. E,F,B (overrides --method)")
    p.add_argument("--replicates", type=int, default=1, help="seeds seed, seed+1, ...")
    p.add_argument("--n-per-group", type=int, default=10)
    p.add_argument("--k-over", type=int, help="dictionary size (default 12000)")
    p.add_argument("--iters", type=int)
    p.add_argument("--burn", type=int)
    return parser


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for key in ("seed", "method", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    if getattr(args, "output", None) is not None:
        cfg.output = str(args.output)
    for key in ("samples", "covariates"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, str(v))
    if getattr(args, "no_plots", False):
        cfg.plots = False
    return cfg


def _stages_for(command: str, cfg: RunConfig) -> Sequence[str]:
    if command == "build-basis":
        return (("eqf",) if cfg.samples else ()) + BASIS_STAGES[1:]
    if command == "fit":
        return (("eqf",) if cfg.samples and cfg.covariates else ()) + FIT_STAGES
    if command == "infer":
        return INFER_STAGES
    return STAGES


def _print_report(out: Path):
    rep = io.read_json(out / "report.json")
    print(f"method {rep['method']} ({rep['kind']}), {rep['M']} posterior draws")
    for name, c in rep.get("coefficients", {}).items():
        print(f"  {name:>16s}  GBPV {c['gbpv']:.4g}")
    for c in rep.get("contrasts", []):
        scores = "  ".join(f"{m} {c[m]:.3f}" for m in ("mu", "sigma", "xi", "phi"))
        print(f"  contrast {c['name']}: {scores}")
    for g in rep.get("gaussianity", []):
        print(f"  gaussianity {g['row']}: {g['score']:.3f} ({g['lower']:.3f}, {g['upper']:.3f})")
    for m in rep.get("monotonicity", []):
        print(f"  monotone rate at eps={m['epsilon']}: {m['rate']:.4f}")


def _simulate(args) -> int:
    from .pipeline import BasisConfig, derive_seed
    from .simulation import ScenarioConfig, run_scenario
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    seed = args.seed if args.seed is not None else cfg.seed
    methods = (args.methods.split(",") if args.methods else [args.method or cfg.method])
    out = Path(args.output or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    band_rows, score_rows, mono_rows, gauss_rows, basis_rows = [], [], [], [], []
    for r in range(args.replicates):
        s = seed + r
        sc = ScenarioConfig(args.scenario, n_per_group=args.n_per_group, seed=s)
        bcfg = BasisConfig(k_over=args.k_over or cfg.k_over, seed=derive_seed(s, "dictionary"),
                           epsilon=cfg.epsilon, n_folds=cfg.folds, threads=args.threads or cfg.threads)
        mcfg = {"iters": args.iters or cfg.iters, "burn": args.burn if args.burn is not None else cfg.burn,
                "thin": cfg.thin, "nu0": cfg.nu0, "H": cfg.H}
        t0 = time.time()
        tab = run_scenario(sc, methods, basis_config=bcfg, mcmc_config=mcfg)
        log.info("scenario %s seed %d done in %.1f s", sc.scenario, s, time.time() - t0)
        for m in methods:
            m = m.upper()
            rows = [b for b in tab.bands if b["method"] == m]
            if rows:
                band_rows.append([s, m] + [v for b in rows for v in (b["area"], b["coverage"], b["gbpv"])])
        score_rows += [[s, x["method"], x["hypothesis"], str(x["truth_equal"]), x["score"]] for x in tab.scores]
        mono_rows += [[s, x["method"], x["epsilon"], x["rate"]] for x in tab.monotonicity]
        gauss_rows += [[s, x["method"], x["group"], x["score"], x["lower"], x["upper"]] for x in tab.gaussianity]
        if tab.basis:
            basis_rows.append([s, tab.basis["C"], tab.basis["K"], tab.basis["rho0"]])
        print(f"seed {s}: " + ", ".join(f"{b['method']} beta{b['coefficient']} area {b['area']:.3f} "
                                        f"coverage {b['coverage']:.3f}" for b in tab.bands))
    A = 4
    header = ["seed", "method"] + [f"beta{a}_{k}" for a in range(1, A + 1) for k in ("area", "coverage", "gbpv")]
    io.write_csv(out / "table_bands.csv", header, band_rows)
    io.write_csv(out / "table_scores.csv", ["seed", "method", "hypothesis", "truth_equal", "score"], score_rows)
    io.write_csv(out / "table_monotonicity.csv", ["seed", "method", "epsilon", "rate"], mono_rows)
    io.write_csv(out / "table_gaussianity.csv", ["seed", "method", "group", "score", "lower", "upper"], gauss_rows)
    io.write_csv(out / "table_basis.csv", ["seed", "C", "K", "rho0"], basis_rows)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return _simulate(args)
        cfg = _load_config(args)
        if args.command == "report":
            _print_report(Path(cfg.output))
            return EXIT_OK
        ok, out = run_stages(cfg, _stages_for(args.command, cfg))
    except QFRError as exc:
        print(f"qfr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not ok:
        index = io.read_json(out / INDEX_NAME)
        stage = index.get("failed_stage")
        err = index["stages"].get(stage, {}).get("error", "unknown error") if stage else "incomplete"
        print(f"qfr: stage {stage} failed: {err}", file=sys.stderr)
        return EXIT_STAGE_FAILED
    if args.command in ("infer", "run"):
        _print_report(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
