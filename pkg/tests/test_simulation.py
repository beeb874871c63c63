import numpy as np
import pytest
from scipy.stats import skew

from qfr.eqf import eqf_grid
from qfr.errors import ConfigError, UnsupportedMethodError
from qfr.simulation import (HYPOTHESES, SCENARIOS, Component, Mixture, ScenarioConfig, gbm_like_dataset, generate,
                            group_design, monotonicity_rows, ou_noise, run_scenario, sample_skew_normal,
                            scenario_id, true_coefficients)


def test_normal_reduction():
    x = sample_skew_normal(1.0, 5.0, 0.0, 100_000, 0)
    assert x.mean() == pytest.approx(1.0, abs=0.02 * 5)
    assert x.std() == pytest.approx(5.0, rel=0.02)


def test_skewed_group_moments():
    x = sample_skew_normal(9.11, 7.89, -4.0, 100_000, 1)
    mean, var, sk, _ = Component(9.11, 7.89, -4.0).moments()
    # the stated parameters give mean 3.00 in closed form; SD and skewness match the description
    assert mean == pytest.approx(3.0, abs=0.01)
    assert x.mean() == pytest.approx(mean, abs=0.05)
    assert x.std() == pytest.approx(5.0, rel=0.05)
    assert skew(x) == pytest.approx(-0.78, rel=0.05)
    assert sk == pytest.approx(-0.78, rel=0.05)


def test_skewness_limit():
    _, _, sk, _ = Component(0.0, 1.0, -1e6).moments()
    assert sk == pytest.approx(-0.9953, abs=1e-3)
    with pytest.raises(ConfigError):
        sample_skew_normal(0, 0, 1, 5)


def test_component_cdf_ppf_roundtrip():
    c = Component(1.0, 2.0, 3.0)
    p = np.linspace(0.01, 0.99, 17)
    assert np.allclose(c.cdf(c.ppf(p)), p, atol=1e-10)


def test_mixture_quantile_and_moments():
    mix = SCENARIOS["multimodal"][0]
    p = np.linspace(0.001, 0.999, 99)
    q = mix.quantile(p)
    assert np.all(np.diff(q) > 0)
    assert np.allclose(mix.cdf(q), p, atol=1e-9)
    x = mix.sample(200_000, np.random.default_rng(0))
    m, sd, sk, _ = mix.moments()
    assert x.mean() == pytest.approx(m, abs=0.05)
    assert x.std() == pytest.approx(sd, rel=0.01)
    with pytest.raises(ConfigError):
        mix.quantile([0.0])
    with pytest.raises(ConfigError):
        Mixture((Component(0, 1),), (0.5,))


@pytest.mark.parametrize("g,expect", [(0, (-0.06, 5.30, 0.02)), (1, (-0.07, 6.40, 0.39)),
                                      (2, (3.05, 5.05, -0.05)), (3, (3.05, 5.03, 0.07))])
def test_multimodal_group_moments(g, expect):
    m, sd, sk, _ = SCENARIOS["multimodal"][g].moments()
    # stated values are rounded summaries of the stated mixture parameters
    assert m == pytest.approx(expect[0], abs=0.12)
    assert sd == pytest.approx(expect[1], rel=0.01)
    assert sk == pytest.approx(expect[2], abs=0.02)


def test_ou_independent_when_base_zero():
    x = np.vstack([ou_noise(256, 0.0, s) for s in range(400)])
    c = np.corrcoef(x[:, 10], x[:, 11])[0, 1]
    assert abs(c) < 0.15
    assert x.std() == pytest.approx(1.0, rel=0.05)


def test_ou_autocorrelation():
    m, h = 1024, 256
    x = np.vstack([ou_noise(m, 0.9, s) for s in range(200)])
    x = x - x.mean(axis=0)
    cov = (x[:, :-h] * x[:, h:]).mean(axis=0)
    corr = cov / np.sqrt(x[:, :-h].var(axis=0) * x[:, h:].var(axis=0))
    assert corr.mean() == pytest.approx(0.9 ** (h / (m + 1)), rel=0.03)
    assert x.var(axis=0).mean() == pytest.approx(1.0, rel=0.1)


def test_ou_unit_distance():
    # on a grid of two points one unit apart the correlation is the base itself
    phi = 0.9 ** (1.0 / (1 + 1))
    assert phi ** 2 == pytest.approx(0.9)


def test_design_and_config():
    X = group_design(3)
    assert X.shape == (12, 4) and X[:, 0].all()
    assert X[3:6, 1].all() and X[:3, 1:].sum() == 0
    assert scenario_id("2") == "multimodal"
    for bad in ({"m": 1000}, {"n_per_group": 1}, {"ou_base": 1.0}, {"scenario": "3"}, {"noise_sd": -1}):
        with pytest.raises(ConfigError):
            ScenarioConfig(**bad)
    rows = monotonicity_rows(30, 4, 0)
    assert rows.shape == (30, 4) and np.all(rows[:, 0] == 1) and np.all((rows >= 0) & (rows <= 1))


def test_generate_deterministic():
    cfg = ScenarioConfig("1", n_per_group=2, m=64, seed=3)
    a, b = generate(cfg), generate(cfg)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a.eqfs, b.eqfs))
    assert [e.subject_id for e in a.eqfs][:3] == ["g1_s01", "g1_s02", "g2_s01"]
    assert all(np.all(np.diff(e.values) >= 0) for e in a.eqfs)
    c = generate(ScenarioConfig("1", n_per_group=2, m=64, seed=4))
    assert not np.array_equal(a.eqfs[0].values, c.eqfs[0].values)


def _group_mean_error(scenario, noise_sd, seed):
    d = generate(ScenarioConfig(scenario, n_per_group=100, seed=seed, noise_sd=noise_sd))
    g = eqf_grid(1024)
    keep = (g >= 0.05) & (g <= 0.95)
    Q = np.vstack([e.values for e in d.eqfs])
    means = np.vstack([Q[d.groups == k + 1].mean(axis=0) for k in range(4)])
    truth = np.vstack([m.quantile(g) for m in d.mixtures])
    return np.abs(means - truth)[:, keep].max(axis=1)


@pytest.mark.parametrize("scenario", ["1", "2"])
def test_group_means_converge_to_truth(scenario):
    # sup error of a 100-subject mean, averaged over three replicates
    err = np.mean([_group_mean_error(scenario, 0.0, seed) for seed in range(3)], axis=0)
    assert np.all(err < 0.1)


@pytest.mark.parametrize("scenario", ["1", "2"])
def test_noisy_group_means_within_noise_level(scenario):
    # OU noise is close to a per-subject shift of SD 1, so a mean over 100 subjects keeps SD 0.1
    err = _group_mean_error(scenario, 1.0, 1)
    assert np.all(err < 0.1 + 4 * np.sqrt(1 / 100))


def test_true_coefficients():
    g = np.array([0.25, 0.5, 0.75])
    beta = true_coefficients(SCENARIOS["skew-normal"], g)
    assert beta[0, 1] == pytest.approx(1.0)
    assert np.allclose(beta[1], 2.0)
    assert np.allclose(beta[2], 1.5 * 0.6744897501960817 * np.array([-1, 0, 1]), atol=1e-9)


def test_hypotheses_match_truth():
    for name, hyps in HYPOTHESES.items():
        mom = [m.moments() for m in SCENARIOS[name]]
        for moment, i, j, eq in hyps:
            k = {"mu": 0, "sigma": 1, "xi": 2}[moment]
            diff = abs(mom[i - 1][k] - mom[j - 1][k])
            assert (diff < 0.15) == eq, (name, moment, i, j)


def test_unknown_method():
    with pytest.raises(UnsupportedMethodError):
        run_scenario(ScenarioConfig("1", n_per_group=2, m=64), ["A"])


def test_run_scenario_small_and_deterministic():
    cfg = ScenarioConfig("1", n_per_group=4, m=128, seed=2)
    mc = {"iters": 300, "burn": 50}
    a = run_scenario(cfg, ["B", "G"], mcmc_config=mc)
    b = run_scenario(cfg, ["B", "G"], mcmc_config=mc)
    assert a.bands == b.bands and a.scores == b.scores and a.monotonicity == b.monotonicity
    assert len(a.bands) == 4
    assert all(0.0 <= r["coverage"] <= 1.0 for r in a.bands)
    assert {r["method"] for r in a.scores} == {"B", "G"}
    assert a.rate("B", 0.01) <= 1.0
    assert a.band("B", 2)["area"] > 0


def test_gbm_like_dataset():
    samples, X, names = gbm_like_dataset(0)
    sizes = [s.m for s in samples]
    assert len(samples) == 64 and X.shape == (64, 6) and len(names) == 6
    assert min(sizes) == 371 and max(sizes) == 3421
    a, _, _ = gbm_like_dataset(0)
    assert np.array_equal(a[5].values, samples[5].values)
