import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from collapse_walk.process import ModelParams
from collapse_walk.scaling import (MarginalSample, baseline_compare, check_grid,
                                   clt_test, fit_variance_growth, increment_correlation, ks_normal,
                                   marginal_samples, normal_cdf, recurrence_stats, sample_paths,
                                   variance_linearity)


@pytest.mark.parametrize("x", [-8.0, -3.1, -1.0, -0.2, 0.0, 0.5, 1.96, 4.0, 7.5])
def test_normal_cdf_against_high_precision(x):
    assert abs(float(normal_cdf(x)) - float(mpmath.ncdf(x))) < 1e-10


def test_linear_fit_is_exact_on_a_line():
    times = [1.0, 2.0, 5.0, 10.0, 20.0]
    slope, icpt = fit_variance_growth(times, [2 * t for t in times])
    assert slope == pytest.approx(2.0, abs=1e-12)
    assert icpt == pytest.approx(0.0, abs=1e-11)


def test_ks_distance_matches_scipy():
    x = np.random.default_rng(1).normal(size=5_000)
    d, pv = ks_normal(x)
    ref = stats.kstest(x, "norm", method="exact")
    assert d == pytest.approx(ref.statistic, rel=1e-12)
    assert pv == pytest.approx(ref.pvalue, rel=1e-6)


def test_clt_accepts_normal_and_rejects_wrong_scale():
    rng = np.random.default_rng(2)
    values = rng.normal(scale=math.sqrt(1.7), size=(10_000, 1))
    sample = MarginalSample(100.0, 1.0, values, seed=0)
    assert clt_test(sample, 1.7).passed
    assert not clt_test(sample, 1.0).passed


def test_clt_rejects_degenerate_sample():
    with pytest.raises(ValueError):
        clt_test(MarginalSample(10.0, 1.0, np.zeros((200, 1)), 0), 1.0)


def test_marginal_preconditions():
    params = ModelParams(1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        marginal_samples(params, 0.5, 1.0, 100, 1)
    with pytest.raises(ValueError):
        marginal_samples(params, 10.0, 1.5, 100, 1)
    with pytest.raises(ValueError):
        marginal_samples(params, 10.0, 1.0, 99, 1)


def test_free_walk_marginal_is_normal_with_rate_lambda():
    params = ModelParams(1.5, 0.0, 1.0)
    sample = marginal_samples(params, 400.0, 1.0, 5_000, 3)
    assert clt_test(sample, 1.5).passed
    assert np.all(np.abs(sample.values * 20.0 - np.round(sample.values * 20.0)) < 1e-9)


def test_variance_growth_needs_a_decade():
    with pytest.raises(ValueError):
        check_grid([1.0, 2.0, 3.0, 4.0, 5.0])
    with pytest.raises(ValueError):
        check_grid([1.0, 10.0])


def test_free_walk_variance_grows_at_rate_lambda():
    growth = variance_linearity(ModelParams(2.0, 0.0, 1.0), [10.0, 20.0, 40.0, 70.0, 100.0],
                                4_000, 5)
    assert abs(growth.slope - 2.0) < 4 * growth.se_slope
    assert abs(growth.intercept) < 4 * growth.se_intercept


def test_increments_of_free_walk_uncorrelated():
    paths = sample_paths(ModelParams(1.0, 0.0, 1.0), [50.0, 100.0], 4_000, 9)
    out = increment_correlation(paths, 0, 1)
    assert out["passed"] and out["band"] == pytest.approx(4 / math.sqrt(4_000))


def test_recurrence_fraction_nondecreasing():
    rec = recurrence_stats(ModelParams(1.0, 0.5, 1.0), [10.0, 100.0, 1_000.0], 1_000, 4)
    f = rec.fraction_returned
    assert f[0] <= f[1] <= f[2]
    assert rec.mean_returns[0] <= rec.mean_returns[1] <= rec.mean_returns[2]


def test_zero_horizon_paths_sit_at_origin():
    paths = sample_paths(ModelParams(1.0, 0.5, 1.0, dim=2), [0.0], 200, 1)
    assert np.all(paths.positions == 0) and np.all(paths.returns_at == 0)


def test_compare_free_walk_is_exactly_one():
    rep = baseline_compare(ModelParams(1.0, 0.0, 1.0), 1_000, 1)
    assert (rep.ratio, rep.lower, rep.upper, rep.verdict) == (1.0, 1.0, 1.0, "inconclusive")


def test_compare_with_supplied_coefficient():
    rep = baseline_compare(ModelParams(1.0, 1.0, 20.0), 1_000, 1, coeff=0.5, se_coeff=0.01)
    assert rep.verdict == "slower" and rep.ratio == 0.5
    assert rep.zeta_hint == pytest.approx((2 / 21) / (1 + 1 / 21))
