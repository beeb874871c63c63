import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtri

from qfr.eqf import (SampleSet, build_eqf, eval_eqf, eqf_grid, modeling_delta, moments_of_qf, reference_grid,
                     resample_to_grid, sample_moments, trapezoid_weights)
from qfr.errors import DegenerateSampleError, OutOfRangeError, ValidationError

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_build_sorts_values_onto_grid():
    q = build_eqf(SampleSet("a", [3.0, 1.0, 2.0]))
    assert np.allclose(q.grid, [0.25, 0.5, 0.75])
    assert q.values.tolist() == [1.0, 2.0, 3.0]


def test_ties_are_kept():
    q = build_eqf(SampleSet("a", [5.0, 5.0]))
    assert np.allclose(q.grid, [1 / 3, 2 / 3])
    assert q.values.tolist() == [5.0, 5.0]


def test_median_of_normal_draws():
    x = np.random.default_rng(3).standard_normal(1024)
    q = build_eqf(SampleSet("n", x))
    assert abs(eval_eqf(q, 0.5) - np.sort(x)[511:513].mean()) < 1e-12
    assert abs(eval_eqf(q, 0.5)) < 0.1


def test_too_few_or_non_finite_values():
    with pytest.raises(DegenerateSampleError):
        SampleSet("a", [1.0])
    with pytest.raises(ValidationError):
        SampleSet("a", [1.0, np.nan])


def test_eval_at_grid_point_and_between():
    q = build_eqf(SampleSet("a", [1.0, 2.0, 3.0]))
    assert eval_eqf(q, 0.5) == 2.0
    assert eval_eqf(q, 0.375) == pytest.approx(1.5, abs=1e-15)
    with pytest.raises(OutOfRangeError):
        eval_eqf(q, 0.95)


def test_resample_identity_and_singleton():
    q = build_eqf(SampleSet("a", np.random.default_rng(0).normal(size=50)))
    assert np.array_equal(resample_to_grid(q, q.grid), q.values)
    assert resample_to_grid(q, [0.4])[0] == eval_eqf(q, 0.4)


def test_resample_1024_matches_order_statistics():
    q = build_eqf(SampleSet("a", np.random.default_rng(1).normal(size=1024)))
    assert np.array_equal(resample_to_grid(q, np.arange(1, 1025) / 1025), q.values)


def test_delta_and_reference_grid():
    d = modeling_delta([9, 99, 3])
    assert d == 0.25
    g = reference_grid(0.1, 9)
    assert g[0] == 0.1 and g[-1] == 0.9 and np.allclose(np.diff(g), 0.1)


def test_trapezoid_weights_integrate_linear_exactly():
    g = np.linspace(0.2, 0.7, 11)
    w = trapezoid_weights(g)
    assert w.sum() == pytest.approx(1.0)
    # mean of p under the uniform measure on [0.2, 0.7]
    assert w @ g == pytest.approx(0.45, abs=1e-14)


def test_moments_of_standard_normal_quantile():
    g = np.arange(1, 200001) / 200001
    m = moments_of_qf(ndtri(g), g)
    assert abs(m.mean) < 1e-2 and abs(m.variance - 1) < 1e-2
    assert abs(m.skewness) < 1e-2 and abs(m.kurtosis - 3) < 1e-1


def test_constant_quantile_has_undefined_shape():
    m = moments_of_qf(np.full(10, 2.5))
    assert m.mean == pytest.approx(2.5) and m.variance < 1e-20
    assert m.skewness is None and m.kurtosis is None


def test_normal_sample_recovers_mean_and_variance():
    x = np.random.default_rng(5).normal(2.0, 3.0, 4096)
    m = moments_of_qf(build_eqf(SampleSet("x", x)).values)
    assert abs(m.mean - 2.0) / 2.0 < 0.05
    assert abs(m.variance - 9.0) / 9.0 < 0.05
    s = sample_moments(x)
    assert s.mean == pytest.approx(x.mean())


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=2, max_size=60))
def test_eqf_is_non_decreasing(values):
    q = build_eqf(SampleSet("h", values))
    assert np.all(np.diff(q.values) >= 0)
    assert np.all(np.diff(q.grid) > 0) and q.grid[0] > 0 and q.grid[-1] < 1


@settings(max_examples=60, deadline=None)
@given(st.lists(finite, min_size=2, max_size=40), st.lists(st.floats(0, 1), min_size=2, max_size=20))
def test_eval_is_monotone_in_p(values, us):
    q = build_eqf(SampleSet("h", values))
    lo, hi = q.support
    p = np.sort(lo + (hi - lo) * np.asarray(us))
    v = resample_to_grid(q, p)
    assert np.all(np.diff(v) >= -1e-9 * max(1.0, np.abs(v).max()))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=8, max_size=40, unique=True),
       st.floats(-50, 50), st.floats(0.1, 20))
def test_moments_affine_equivariance(values, a, b):
    v = np.sort(np.asarray(values))
    m = moments_of_qf(v)
    if m.skewness is None:
        return
    m2 = moments_of_qf(a + b * v)
    assert m2.mean == pytest.approx(a + b * m.mean, rel=1e-8, abs=1e-8)
    assert m2.variance == pytest.approx(b * b * m.variance, rel=1e-8)
    assert m2.skewness == pytest.approx(m.skewness, rel=1e-7, abs=1e-9)
    assert m2.kurtosis == pytest.approx(m.kurtosis, rel=1e-7)
    assert m.kurtosis >= 1 - 1e-12
