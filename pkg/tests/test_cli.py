import json

import numpy as np
import pytest

from qfr import io
from qfr.cli import EXIT_OK, EXIT_STAGE_FAILED, EXIT_USAGE, main
from qfr.eqf import SampleSet
from qfr.workflow import RunConfig, STAGES


@pytest.fixture(scope="module")
def small_inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    rng = np.random.default_rng(0)
    samples, ids, X = [], [], []
    for i in range(14):
        g = i % 2
        m = int(rng.integers(150, 260))
        y = rng.normal(0.0, 1.0, m) * (1.0 + 0.5 * g) + 2.0 * g
        sid = f"s{i:02d}"
        samples.append(SampleSet(sid, y))
        ids.append(sid)
        X.append([g, float(rng.normal())])
    io.write_samples(d / "samples.csv", samples)
    io.write_covariates(d / "covariates.csv", ids, np.asarray(X), ["group", "score"])
    cfg = {"k_over": 150, "iters": 220, "burn": 20, "grid_size": 256, "monotone_eps": [0.01]}
    (d / "config.json").write_text(json.dumps(cfg))
    return d


def _args(d, out, *extra):
    return ["run", "--samples", str(d / "samples.csv"), "--covariates", str(d / "covariates.csv"),
            "--config", str(d / "config.json"), "--output", str(out), *extra]


@pytest.fixture(scope="module")
def full_run(small_inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("run1")
    assert main(_args(small_inputs, out)) == EXIT_OK
    return out


def test_run_writes_every_stage(full_run):
    index = io.read_json(full_run / "index.json")
    assert all(index["stages"][s]["status"] == "complete" for s in STAGES)
    assert index["failed_stage"] is None
    for a in index["artifacts"]:
        assert io.sha256_file(full_run / a["path"]) == a["sha256"]
    for name in ("eqf_cache.csv", "selection.csv", "curve.csv", "basis.csv", "coefficients.csv",
                 "posterior_draws.csv", "report.json", "bands.csv", "simbas.csv", "pdf.csv"):
        assert any(a["path"].endswith(name) for a in index["artifacts"]), name
    assert (full_run / "plots" / "simbas.svg").exists()


def test_report_contents(full_run, capsys):
    rep = io.read_json(full_run / "report.json")
    assert rep["method"] == "E"
    for c in rep["coefficients"].values():
        assert 0.0 < c["gbpv"] <= 1.0
    assert main(["report", "--output", str(full_run)]) == EXIT_OK
    assert "GBPV" in capsys.readouterr().out


def test_group_effect_detected(full_run):
    rep = io.read_json(full_run / "report.json")
    assert rep["coefficients"]["group"]["gbpv"] < 0.05


def test_rerun_identical_hashes(small_inputs, full_run, tmp_path):
    out = tmp_path / "run2"
    assert main(_args(small_inputs, out)) == EXIT_OK
    a = io.read_json(full_run / "index.json")["artifacts"]
    b = io.read_json(out / "index.json")["artifacts"]
    assert [(x["path"], x["sha256"]) for x in a] == [(x["path"], x["sha256"]) for x in b]


def test_staged_commands_compose(small_inputs, full_run, tmp_path):
    out = tmp_path / "staged"
    common = ["--config", str(small_inputs / "config.json"), "--output", str(out)]
    assert main(["build-basis", "--samples", str(small_inputs / "samples.csv"),
                 "--covariates", str(small_inputs / "covariates.csv"), *common]) == EXIT_OK
    index = io.read_json(out / "index.json")
    assert "posterior" not in index["stages"]
    assert (out / "basis.json").exists()
    assert main(["fit", *common]) == EXIT_OK
    assert main(["infer", "--no-plots", *common]) == EXIT_OK
    one = {x["path"]: x["sha256"] for x in io.read_json(full_run / "index.json")["artifacts"]}
    two = {x["path"]: x["sha256"] for x in io.read_json(out / "index.json")["artifacts"]}
    assert two["report.json"] == one["report.json"]


def test_infer_without_fit(tmp_path, capsys):
    code = main(["infer", "--output", str(tmp_path / "empty")])
    assert code in (EXIT_STAGE_FAILED, EXIT_USAGE)
    assert "MissingArtifactError" in capsys.readouterr().err
    index = io.read_json(tmp_path / "empty" / "index.json")
    assert index["failed_stage"] == "inference"
    assert index["stages"]["plots"]["status"] == "skipped"


def test_zero_iterations_rejected_before_mcmc(small_inputs, tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"iters": 0}))
    out = tmp_path / "out"
    code = main(["run", "--samples", str(small_inputs / "samples.csv"), "--covariates",
                 str(small_inputs / "covariates.csv"), "--config", str(cfg), "--output", str(out)])
    assert code == EXIT_USAGE
    assert "iters" in capsys.readouterr().err
    assert not (out / "index.json").exists()


def test_unknown_flag_and_key(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--bogus"])
    assert exc.value.code != 0
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"not_a_key": 1}))
    assert main(["run", "--config", str(cfg)]) == EXIT_USAGE
    with pytest.raises(SystemExit):
        main(["fit", "--method", "A"])


def test_config_roundtrip():
    cfg = RunConfig(seed=4, k_over=50, alpha=[0.1])
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_simulate_tables(tmp_path):
    out = tmp_path / "sim"
    code = main(["simulate", "--scenario", "1", "--methods", "B,G", "--n-per-group", "3", "--iters", "150",
                 "--burn", "20", "--output", str(out)])
    assert code == EXIT_OK
    header, rows = io.read_csv(out / "table_bands.csv")
    assert header[:5] == ["seed", "method", "beta1_area", "beta1_coverage", "beta1_gbpv"]
    assert [r[1] for _, r in rows] == ["B"]
    _, rows = io.read_csv(out / "table_scores.csv")
    assert {r[1] for _, r in rows} == {"B", "G"} and len(rows) == 12
    assert (out / "table_monotonicity.csv").exists()
