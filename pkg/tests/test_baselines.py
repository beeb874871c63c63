import numpy as np
import pytest

from qfr.baselines import (METHODS, FitData, MomentRegressionFit, fit_method, moment_features, pca_basis)
from qfr.eqf import SampleSet, build_eqf, trapezoid_weights
from qfr.errors import ConfigError, UnsupportedMethodError
from qfr.inference import IdentityBasis, to_data_space
from qfr.mcmc import DesignMatrix, mc_standard_error
from qfr.pipeline import restrict_to_range
from qfr.quantlets import build_basis


@pytest.fixture(scope="module")
def gaussian_data(small_dictionary, ref_grid):
    rng = np.random.default_rng(5)
    n = 16
    g = np.arange(n) % 2
    samples = [SampleSet(f"s{i}", rng.normal(1.0 + g[i], 1.0 + 0.5 * g[i], 1024)) for i in range(n)]
    subjects = []
    for s in samples:
        q, grid = restrict_to_range(build_eqf(s), 1 / 1025)
        subjects.append((s.subject_id, q, ref_grid))
    q_ref = np.vstack([s[1] for s in subjects])
    idx = [0, 1, 4, 9, 30]
    dset = small_dictionary.values[idx]
    basis = build_basis(dset, idx, ref_grid, q_ref)
    X = DesignMatrix(np.column_stack([np.ones(n), g]), ["intercept", "g"])
    return FitData(subjects, X, ref_grid, q_ref, basis, dset, [s.values for s in samples])


CFG = {"iters": 1200, "burn": 200, "seed": 3}


def test_method_a_and_unknown(gaussian_data):
    with pytest.raises(UnsupportedMethodError):
        fit_method("A", gaussian_data)
    with pytest.raises(UnsupportedMethodError):
        fit_method("Z", gaussian_data)
    no_basis = FitData(gaussian_data.subjects, gaussian_data.X, gaussian_data.grid, gaussian_data.q_ref)
    with pytest.raises(ConfigError):
        fit_method("E", no_basis)
    assert set(METHODS) == set("BCDEFG")


def test_gaussian_only_matches_full_on_gaussian_data(gaussian_data):
    e = fit_method("E", gaussian_data, CFG)
    f = fit_method("F", gaussian_data, CFG)
    assert f.basis.K == 2 and f.fit.B.shape[2] == 2
    me, mf = e.fit.posterior_mean()[:, :2], f.fit.posterior_mean()
    se = np.hypot(mc_standard_error(e.fit.B[:, :, :2]), mc_standard_error(f.fit.B))
    assert np.all(np.abs(me - mf) <= 3 * se + 1e-3)
    # data-space coefficient functions agree as well
    be = to_data_space(e.fit, e.basis).draws.mean(axis=0)
    bf = to_data_space(f.fit, f.basis).draws.mean(axis=0)
    assert np.abs(be - bf).max() < 0.05


def test_every_method_runs(gaussian_data):
    for m in METHODS:
        res = fit_method(m, gaussian_data, {"iters": 120, "burn": 20, "seed": 0})
        assert res.method == m
        assert res.fit.M == 100
        if m == "B":
            assert isinstance(res.basis, IdentityBasis)
            assert res.fit.B.shape == (100, 2, gaussian_data.grid.size)
        if m == "G":
            assert isinstance(res.fit, MomentRegressionFit)
    d = fit_method("D", gaussian_data, {"iters": 60, "burn": 10})
    assert d.fit.gamma.all()


def test_pca_basis_energy(gaussian_data):
    grid = gaussian_data.grid
    basis = pca_basis(gaussian_data.q_ref, grid, 0.01)
    w = trapezoid_weights(grid)
    assert np.abs(basis.gram() - np.eye(basis.K)).max() < 1e-8
    centred = gaussian_data.q_ref - gaussian_data.q_ref.mean(axis=0)
    proj = ((centred * w) @ basis.functions.T) @ basis.functions
    kept = ((proj**2) @ w).sum() / ((centred**2) @ w).sum()
    assert kept >= 0.99
    c = fit_method("C", gaussian_data, {"iters": 50, "burn": 5})
    assert c.basis.provenance["components"] == basis.K - 1


def test_moment_features(gaussian_data):
    f = moment_features(gaussian_data)
    assert f.shape == (16, 4)
    assert f[1, 0] == pytest.approx(np.mean(gaussian_data.raw_values[1]))
    g = fit_method("G", gaussian_data, CFG)
    m = g.fit.moments([1.0, 1.0])
    assert m.mean.mean() == pytest.approx(2.0, abs=0.1)
    assert m.sd.mean() == pytest.approx(1.5, abs=0.1)
