import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qfr.eqf import trapezoid_weights
from qfr.errors import ConfigError
from qfr.selection import (GramCache, LassoProblem, LosslessnessCurve, SelectionResult, choose_threshold,
                           concordance, cv_lambda, lambda_max, lasso_fit, loo_ccc, losslessness_curve,
                           reduced_set, select_subject, union_counts)


def _orthonormal_design(grid, extra, seed=0):
    """Rows orthonormal under the trapezoid weights, first row constant."""
    w = trapezoid_weights(grid)
    sw = np.sqrt(w)
    rng = np.random.default_rng(seed)
    raw = np.column_stack([sw, rng.standard_normal((grid.size, 1 + extra))])
    Q, _ = np.linalg.qr(raw)
    Q[:, 0] *= np.sign(Q[0, 0])
    return (Q / sw[:, None]).T


@pytest.fixture(scope="module")
def grid():
    return np.arange(1, 201) / 201.0


def test_huge_lambda_leaves_gaussian_pair(small_dictionary, ref_grid):
    w = trapezoid_weights(ref_grid)
    q = 3.0 + 2.0 * small_dictionary.values[1] + 0.3 * small_dictionary.values[40]
    beta, ok = lasso_fit(q, small_dictionary.values, 1e6, ref_grid)
    assert ok
    assert np.all(beta[2:] == 0)
    assert beta[0] == pytest.approx(w @ q, abs=1e-8)
    assert beta[1] == pytest.approx(w @ (q * small_dictionary.values[1]), abs=1e-8)


def test_orthonormal_soft_threshold(grid):
    X = _orthonormal_design(grid, 3, seed=2)
    w = trapezoid_weights(grid)
    rng = np.random.default_rng(5)
    q = X.T @ np.array([1.0, 0.5, 0.4, -0.05, 0.15]) + 0.01 * rng.standard_normal(grid.size)
    lam = 0.2
    beta, ok = lasso_fit(q, X, lam, grid, tol=1e-12)
    z = X @ (w * q)
    expect = z.copy()
    expect[2:] = np.sign(z[2:]) * np.maximum(np.abs(z[2:]) - lam / 2, 0.0)
    assert ok
    assert np.allclose(beta, expect, atol=1e-8)
    assert beta[3] == 0.0


def test_single_element_recovery(small_dictionary, ref_grid):
    k = 77
    q = small_dictionary.values[k].copy()
    beta, _ = lasso_fit(q, small_dictionary.values, 1e-6, ref_grid)
    assert beta[k] == pytest.approx(1.0, abs=0.02)
    assert np.argmax(np.abs(beta[2:])) + 2 == k


def test_objective_non_increasing_per_sweep(small_dictionary, ref_grid):
    rng = np.random.default_rng(1)
    q = small_dictionary.values[[0, 1, 5, 9, 200]].T @ np.array([1, 2, 0.5, -0.3, 0.2])
    q = q + 0.05 * rng.standard_normal(q.size)
    trace = []
    lasso_fit(q, small_dictionary.values, 1e-3, ref_grid, trace=trace)
    assert sum(len(t) for t in trace) > 10
    for objs in trace:
        assert np.all(np.diff(objs) <= 1e-10 * max(1.0, abs(objs[0])))


def test_kkt_conditions(small_dictionary, ref_grid):
    rng = np.random.default_rng(3)
    q = np.sort(rng.standard_normal(ref_grid.size))
    lam = 1e-3
    beta, ok = lasso_fit(q, small_dictionary.values, lam, ref_grid, tol=1e-10)
    sw = np.sqrt(trapezoid_weights(ref_grid))
    prob = LassoProblem(GramCache(small_dictionary.values * sw[None, :]), sw * q)
    nz = np.flatnonzero(beta)
    grad = prob.gradient(nz, beta[nz])
    pen = np.arange(beta.size) >= 2
    on = pen & (beta != 0)
    assert np.all(np.abs(grad[~pen]) < 1e-6)
    assert np.allclose(2 * grad[on], lam * np.sign(beta[on]), atol=1e-4 * lam + 1e-7)
    assert np.all(np.abs(2 * grad[pen & (beta == 0)]) <= lam * (1 + 1e-6))


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-6, 1e3))
def test_zero_input_gives_zero_coefficients(lam):
    grid = np.arange(1, 101) / 101.0
    X = _orthonormal_design(grid, 6, seed=9)
    beta, _ = lasso_fit(np.zeros(grid.size), X, lam, grid)
    assert np.all(beta == 0)


def test_nonpositive_lambda_rejected(grid):
    with pytest.raises(ConfigError):
        lasso_fit(np.zeros(grid.size), _orthonormal_design(grid, 2), 0.0, grid)


def test_cv_noise_picks_large_lambda(small_dictionary, ref_grid):
    rng = np.random.default_rng(0)
    q = rng.standard_normal(ref_grid.size)  # unordered noise
    lam, errors, lambdas = cv_lambda(q, small_dictionary.values, ref_grid, return_path=True)
    assert lam >= lambdas[10]


def test_cv_representable_picks_small_lambda(small_dictionary, ref_grid):
    q = small_dictionary.values[[0, 1, 12, 150]].T @ np.array([2.0, 1.0, 0.3, -0.2])
    lam, errors, lambdas = cv_lambda(q, small_dictionary.values, ref_grid, return_path=True)
    assert lam <= lambdas[-20]


def test_cv_deterministic(small_dictionary, ref_grid):
    q = small_dictionary.values[[0, 1, 30]].T @ np.array([1.0, 1.0, 0.2])
    assert cv_lambda(q, small_dictionary.values, ref_grid, seed=1) == cv_lambda(q, small_dictionary.values,
                                                                               ref_grid, seed=2)


def test_cv_fold_guards(grid):
    X = _orthonormal_design(grid, 2)
    with pytest.raises(ConfigError):
        cv_lambda(grid, X, grid, n_folds=1)
    with pytest.raises(ConfigError):
        cv_lambda(grid[:15], X[:, :15], grid[:15], n_folds=10)
    with pytest.raises(ConfigError):
        cv_lambda(grid, X, grid, lambdas=[0.1])


def _fake_selection(sid, n_el, chosen):
    c = np.zeros(n_el)
    c[[0, 1]] = 1.0
    c[list(chosen)] = 0.5
    return SelectionResult(sid, 0.1, c)


def test_union_counts_and_reduced_set():
    sels = [_fake_selection(i, 8, ch) for i, ch in enumerate([(2, 3), (3,), (3, 5), ()])]
    counts = union_counts(sels, 8)
    assert counts.tolist() == [0, 0, 1, 3, 0, 1, 0, 0]
    assert reduced_set(counts, 2).tolist() == [0, 1, 3]
    assert reduced_set(counts, 4).tolist() == [0, 1]
    assert reduced_set(counts, 1).tolist() == [0, 1, 2, 3, 5]


def test_concordance_examples():
    w = np.full(50, 1 / 50)
    y = np.linspace(-1, 1, 50)
    assert concordance(y, y, w) == pytest.approx(1.0, abs=1e-12)
    assert concordance(y, np.full(50, w @ y), w) == pytest.approx(0.0, abs=1e-12)
    assert concordance(y, y + 0.5, w) < 1.0


def test_loo_ccc_examples(grid):
    X = _orthonormal_design(grid, 3, seed=4)
    q_in = X[[0, 1]].T @ np.array([1.0, 2.0])
    sels = [_fake_selection(0, X.shape[0], ()), _fake_selection(1, X.shape[0], ())]
    assert loo_ccc(0, 1, sels, X, q_in, grid) == pytest.approx(1.0, abs=1e-10)
    # orthogonal to the Gaussian pair: projection is the constant mean
    q_out = X[3]
    assert loo_ccc(0, 1, sels, X, q_out, grid) == pytest.approx(0.0, abs=1e-10)
    # subject 0's own selection does not count for its own basis
    sels = [_fake_selection(0, X.shape[0], (3,)), _fake_selection(1, X.shape[0], ())]
    assert loo_ccc(0, 1, sels, X, q_out, grid) == pytest.approx(0.0, abs=1e-10)
    assert loo_ccc(1, 1, sels, X, q_out, grid) == pytest.approx(1.0, abs=1e-10)


@pytest.fixture(scope="module")
def toy_curve():
    grid = np.arange(1, 257) / 257.0
    X = _orthonormal_design(grid, 10, seed=8)
    rng = np.random.default_rng(2)
    subjects, sels = [], []
    for i in range(7):
        chosen = sorted(rng.choice(np.arange(2, 12), size=rng.integers(1, 6), replace=False))
        c = np.zeros(12)
        c[[0, 1]] = [1.0, 1.0]
        c[chosen] = rng.uniform(0.2, 1.0, len(chosen))
        subjects.append((i, X.T @ c, grid))
        sels.append(SelectionResult(i, 0.1, c))
    curve = losslessness_curve(subjects, sels, lambda i, rows: X[rows], 12)
    return grid, X, subjects, sels, curve


def test_curve_matches_direct_loo(toy_curve):
    grid, X, subjects, sels, curve = toy_curve
    for t, C in enumerate(curve.thresholds):
        direct = [loo_ccc(i, int(C), sels, X, s[1], grid) for i, s in enumerate(subjects)]
        assert np.allclose(curve.rho[t], direct, atol=1e-8)


def test_curve_monotone(toy_curve):
    curve = toy_curve[-1]
    assert curve.thresholds.tolist() == list(range(1, 7))
    assert np.all(np.diff(curve.K) <= 0)
    assert np.all(np.diff(curve.rho_min) <= 1e-6)
    assert np.all((curve.rho >= 0) & (curve.rho <= 1))


def test_choose_threshold():
    curve = LosslessnessCurve(np.arange(1, 6), np.array([20, 15, 9, 4, 2]),
                              np.array([0.999, 0.995, 0.991, 0.95, 0.5]), np.ones(5), np.ones((5, 3)))
    assert choose_threshold(curve, 0.01) == (3, 9)
    assert choose_threshold(curve, 1.0) == (5, 2)
    with pytest.warns(RuntimeWarning):
        assert choose_threshold(curve, 1e-4) == (1, 20)


def test_select_subject_result(small_dictionary, ref_grid):
    sw = np.sqrt(trapezoid_weights(ref_grid))
    cache = GramCache(small_dictionary.values * sw[None, :])
    q = small_dictionary.values[[0, 1, 20]].T @ np.array([0.5, 1.5, 0.4])
    res = select_subject("a", q, ref_grid, cache)
    assert res.lambda_ > 0
    assert set(res.selected.tolist()) == set(np.flatnonzero(res.coefficients).tolist())
    assert 20 in res.selected_beta
    assert lambda_max(LassoProblem(cache, sw * q)) > res.lambda_
