import math

import numpy as np
import pytest

from qfr import io
from qfr.eqf import SampleSet, build_eqf
from qfr.errors import ValidationError
from qfr.mcmc import gibbs_fit
from qfr.quantlets import QuantletBasis, QuantletCoefficients
from qfr.selection import LosslessnessCurve, SelectionResult


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_ingest_two_subjects(tmp_path):
    s = _write(tmp_path / "s.csv", "subject_id,value\na,1\na,2\na,3\nb,4\nb,5\nb,6.5\n")
    c = _write(tmp_path / "c.csv", "subject_id,age\nb,30\na,40\n")
    samples, X = io.ingest(s, c)
    assert [x.subject_id for x in samples] == ["a", "b"]
    assert X.X.shape == (2, 2)
    assert X.names == ["intercept", "age"]
    assert X.X[:, 1].tolist() == [40.0, 30.0]


def test_ingest_keeps_existing_intercept(tmp_path):
    s = _write(tmp_path / "s.csv", "subject_id,value\n" + "".join(f"{i},{v}\n" for i in "abc" for v in (1, 2)))
    c = _write(tmp_path / "c.csv", "subject_id,one,x\na,1,0\nb,1,1\nc,1,3\n")
    _, X = io.ingest(s, c)
    assert X.names == ["one", "x"]


def test_ingest_id_errors(tmp_path):
    s = _write(tmp_path / "s.csv", "subject_id,value\na,1\na,2\nb,1\nb,3\n")
    c = _write(tmp_path / "c.csv", "subject_id,x\na,0\nb,1\nzed,2\n")
    with pytest.raises(ValidationError, match="zed"):
        io.ingest(s, c)
    c2 = _write(tmp_path / "c2.csv", "subject_id,x\na,0\n")
    with pytest.raises(ValidationError, match="without covariates: b"):
        io.ingest(s, c2)
    c3 = _write(tmp_path / "c3.csv", "subject_id,x\na,0\na,1\n")
    with pytest.raises(ValidationError, match="more than one"):
        io.read_covariates(c3)


def test_non_numeric_cell_reports_row(tmp_path):
    s = _write(tmp_path / "s.csv", "subject_id,value\na,1\na,oops\n")
    with pytest.raises(ValidationError, match="row 3"):
        io.read_samples(s)
    c = _write(tmp_path / "c.csv", "subject_id,x\na,1\nb,\n")
    with pytest.raises(ValidationError, match="row 3"):
        io.read_covariates(c)
    with pytest.raises(ValidationError, match="header"):
        io.read_samples(_write(tmp_path / "h.csv", "id,val\na,1\n"))


def test_samples_and_eqf_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    samples = [SampleSet(f"s{i}", rng.normal(size=5 + i)) for i in range(3)]
    io.write_samples(tmp_path / "s.csv", samples)
    back = io.read_samples(tmp_path / "s.csv")
    assert all(np.array_equal(a.values, b.values) for a, b in zip(samples, back))
    eqfs = [build_eqf(s) for s in samples]
    io.write_eqf_cache(tmp_path / "e.csv", eqfs)
    again = io.read_eqf_cache(tmp_path / "e.csv")
    assert all(np.array_equal(a.values, b.values) and np.array_equal(a.grid, b.grid) for a, b in zip(eqfs, again))


def test_covariates_roundtrip(tmp_path):
    X = np.array([[0.1, 1.0], [1 / 3, 0.0]])
    io.write_covariates(tmp_path / "c.csv", ["a", "b"], X, ["u", "v"])
    ids, names, Y = io.read_covariates(tmp_path / "c.csv")
    assert ids == ["a", "b"] and names == ["u", "v"] and np.array_equal(X, Y)


def test_json_non_finite(tmp_path):
    io.write_json(tmp_path / "x.json", {"a": float("nan"), "b": [1.0, float("inf")], "c": np.int64(3)})
    d = io.read_json(tmp_path / "x.json")
    assert d["c"] == 3
    assert isinstance(d["a"], str) and (d["b"][1] == "inf" or d["b"][1] == "Infinity")


def test_dictionary_elements_roundtrip(tmp_path, small_dictionary):
    io.write_dictionary(tmp_path, small_dictionary)
    theta = io.read_dictionary_elements(tmp_path / "dictionary_elements.csv")
    assert np.array_equal(theta, small_dictionary.theta)
    assert np.array_equal(np.load(tmp_path / "dictionary_values.npy"), small_dictionary.values)
    man = io.read_json(tmp_path / "dictionary.json")
    assert man["elements"] == "dictionary_elements.csv"


def test_selection_roundtrip(tmp_path):
    c = np.zeros(10)
    c[[0, 1, 4]] = [1.5, -0.25, 1e-17]
    sels = [SelectionResult("a", 0.03, c), SelectionResult("b", 1.0 / 3, np.r_[1.0, 2.0, np.zeros(8)])]
    io.write_selection(tmp_path / "sel.csv", sels)
    back = io.read_selection(tmp_path / "sel.csv", 10)
    for a, b in zip(sels, back):
        assert a.subject_id == b.subject_id and a.lambda_ == b.lambda_
        assert np.array_equal(a.coefficients, b.coefficients)


def test_curve_roundtrip(tmp_path):
    curve = LosslessnessCurve(np.arange(1, 4), np.array([9, 5, 2]), np.array([0.999, 0.99, 1 / 3]),
                              np.array([1.0, 0.995, 0.5]), np.zeros((3, 2)))
    io.write_curve(tmp_path / "c.csv", curve)
    back = io.read_curve(tmp_path / "c.csv")
    for f in ("thresholds", "K", "rho_min", "rho_mean"):
        assert np.array_equal(getattr(curve, f), getattr(back, f))


def test_basis_roundtrip(tmp_path):
    grid = np.arange(1, 9) / 9
    rng = np.random.default_rng(0)
    basis = QuantletBasis(grid, rng.normal(size=(3, 8)), np.array([0.5, 0.3, 0.2]), np.array([0, 1, 17]),
                          [{"index": 4, "reason": "test"}], {"threshold": 2}, np.array([1, 1, 2]))
    io.write_basis(tmp_path, basis)
    back = io.read_basis(tmp_path)
    assert np.array_equal(back.functions, basis.functions) and np.array_equal(back.grid, basis.grid)
    assert back.hash() == basis.hash()
    assert back.clusters.tolist() == [1, 1, 2] and back.dropped == basis.dropped


def test_coefficients_roundtrip(tmp_path):
    coefs = QuantletCoefficients(["x", "y"], np.array([[1.0, -2.5e-12], [math.pi, 0.1]]), np.array([0.999, 1.0]))
    io.write_coefficients(tmp_path / "q.csv", coefs)
    back = io.read_coefficients(tmp_path / "q.csv")
    assert back.subject_ids == coefs.subject_ids
    assert np.array_equal(back.values, coefs.values) and np.array_equal(back.ccc, coefs.ccc)


def test_posterior_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(12), rng.normal(size=12)])
    fit = gibbs_fit(rng.normal(size=(12, 3)), X, iters=30, burn=5, seed=0)
    io.write_posterior(tmp_path, fit, ["intercept", "x"])
    back, names = io.read_posterior(tmp_path)
    assert names == ["intercept", "x"]
    assert np.array_equal(back.B, fit.B) and np.array_equal(back.sigma2, fit.sigma2)
    assert np.array_equal(back.gamma, fit.gamma) and back.method == fit.method
    header, rows = io.read_csv(tmp_path / "posterior_draws.csv")
    assert header == ["draw", "a", "k", "value"] and len(rows) == fit.B.size


def test_fmt_roundtrips_floats():
    for x in (0.1, 1 / 3, 1e-300, -2.5e17, 5e-324):
        assert float(io.fmt(x)) == x
