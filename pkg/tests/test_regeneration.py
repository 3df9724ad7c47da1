import math

import numpy as np
import pytest
from scipy import stats

from collapse_walk.process import ModelParams, StopCondition, simulate
from collapse_walk.regeneration import (CycleSamples, RegenerationSample, autocorrelation,
                                        check_bounds, collect, cycle_time_bound,
                                        cycles_from_trajectory, displacement_bound, estimate,
                                        iid_diagnostics, ks_critical_2samp,
                                        mean_increment_zero_test)


def two_point():
    return [RegenerationSample(1.0, (1,)), RegenerationSample(1.0, (-1,))]


def test_two_point_estimate():
    est = estimate(two_point())
    assert est.alpha_hat == 1.0
    assert est.beta2_hat == 2.0
    assert est.coeff == 2.0
    assert not est.degenerate


def test_zero_displacements_are_flagged_degenerate():
    samples = [RegenerationSample(t, (0,)) for t in (0.5, 1.0, 2.0)]
    est = estimate(samples)
    assert est.beta2_hat == 0.0 and est.degenerate


def test_estimate_needs_two_samples():
    with pytest.raises(ValueError):
        estimate([RegenerationSample(1.0, (1,))])


def test_collect_rejects_bad_arguments():
    with pytest.raises(ValueError, match="p = 0"):
        collect(ModelParams(1.0, 0.0, 1.0), 10, 1)
    with pytest.raises(ValueError):
        collect(ModelParams(1.0, 0.5, 1.0), 0, 1)


def test_collected_cycles_are_complete():
    s = collect(ModelParams(1.0, 0.5, 1.0, dim=2), 5_000, 12)
    assert len(s) == 5_000 and s.truncated == 0
    assert np.all(s.delta_tau > 0)
    assert np.all(s.max_broken >= 1)
    assert np.all(np.abs(s.delta_x).sum(axis=1) <= s.attempts)
    assert s[0] == RegenerationSample(float(s.delta_tau[0]), tuple(map(int, s.delta_x[0])),
                                      int(s.attempts[0]), int(s.max_broken[0]))


def test_event_cap_truncations_are_counted():
    s = collect(ModelParams(1.0, 1.0, 0.2), 200, 5, event_cap=3)
    assert s.truncated > 0
    assert len(s) + s.truncated == 200


def test_rows_header_and_values():
    s = collect(ModelParams(1.0, 0.5, 1.0), 10, 2)
    rows = list(s.rows())
    assert rows[0] == ["cycle_index", "delta_tau", "delta_x_0", "attempts", "max_broken"]
    assert float(rows[3][1]) == s.delta_tau[2]


@pytest.mark.parametrize("params,expected", [
    (ModelParams(1.0, 1.0, 1.0), math.e),
    (ModelParams(2.0, 0.5, 1.0), math.e),
])
def test_cycle_time_bound_values(params, expected):
    assert cycle_time_bound(params) == pytest.approx(expected, rel=1e-15)


def test_displacement_bound_value():
    assert displacement_bound(ModelParams(1.0, 1.0, 1.0)) == 0.5
    assert displacement_bound(ModelParams(1.0, 1.0, 9.0)) == pytest.approx(0.9)


def test_bound_report_margins():
    params = ModelParams(1.0, 1.0, 1.0)
    s = collect(params, 20_000, 1)
    report = check_bounds(estimate(s), s, params)
    assert [b.name for b in report.bounds] == ["cycle_time", "mean_abs_displacement",
                                               "moved_fraction"]
    assert not report.violated
    assert report["moved_fraction"].bound == 0.5
    with pytest.raises(KeyError):
        report["nonsense"]


def test_zero_mean_trivial_pair():
    rep = mean_increment_zero_test(two_point())
    assert rep.mean == [0.0] and rep.passed and rep.small_sample


def test_mirrored_run_negates_mean_exactly():
    params = ModelParams(1.0, 0.5, 1.0)
    a = collect(params, 20_000, 17)
    b = collect(params, 20_000, 17, mirror=True)
    assert np.array_equal(a.delta_x, -b.delta_x)
    assert np.array_equal(a.delta_tau, b.delta_tau)
    ra, rb = mean_increment_zero_test(a), mean_increment_zero_test(b)
    assert ra.mean == [-m for m in rb.mean]


def test_constant_samples_are_degenerate():
    s = [RegenerationSample(1.0, (0,)) for _ in range(200)]
    rep = iid_diagnostics(s)
    assert rep.degenerate and not rep.passed
    assert autocorrelation(np.ones(10), 3) == ([0.0, 0.0, 0.0], True)


def test_shuffling_within_halves_keeps_ks_distance():
    s = collect(ModelParams(1.0, 1.0, 2.0), 2_000, 4)
    rng = np.random.default_rng(0)
    half = len(s) // 2
    order = np.concatenate([rng.permutation(half), half + rng.permutation(len(s) - half)])
    shuffled = CycleSamples(s.delta_tau[order], s.delta_x[order], s.attempts[order],
                            s.max_broken[order])
    assert iid_diagnostics(s).ks_distance == iid_diagnostics(shuffled).ks_distance


def test_ks_critical_value_matches_asymptotic_table():
    # 1.628 * sqrt(2/n) is the tabulated 1% two-sample value for equal halves
    assert ks_critical_2samp(5000, 5000) == pytest.approx(1.6276 * math.sqrt(2 / 5000), rel=1e-3)


def test_split_single_run_matches_restarted_cycles():
    params = ModelParams(1.0, 0.5, 1.0)
    long_run = simulate(params, 90, StopCondition(horizon=30_000.0))
    split = cycles_from_trajectory(long_run)
    restarted = collect(params, len(split), 91)
    d = stats.ks_2samp(split.delta_tau, restarted.delta_tau).statistic
    assert d < ks_critical_2samp(len(split), len(restarted))
    d = stats.ks_2samp(split.delta_x[:, 0], restarted.delta_x[:, 0]).statistic
    assert d < ks_critical_2samp(len(split), len(restarted))


def test_split_cycles_sum_to_the_run():
    params = ModelParams(1.0, 1.0, 3.0)
    traj = simulate(params, 3, StopCondition(max_events=2_000))
    split = cycles_from_trajectory(traj)
    assert split.delta_tau.sum() <= traj.final_state.clock
    assert np.all(split.max_broken >= 1)


def test_doubling_cycles_shrinks_se_by_root_two():
    params = ModelParams(1.0, 1.0, 2.0)
    ratios = []
    for rep in range(20):
        small = estimate(collect(params, 5_000, 1000 + rep))
        large = estimate(collect(params, 10_000, 2000 + rep))
        ratios.append(large.se_alpha / small.se_alpha)
    assert abs(np.mean(ratios) - 1 / math.sqrt(2)) < 0.1


def test_isotropy_in_two_dimensions():
    est = estimate(collect(ModelParams(1.0, 0.7, 1.0, dim=2), 50_000, 8))
    b, se = est.beta2_hat, est.se_beta2
    assert abs(b[0, 1]) < 4 * se[0, 1]
    assert abs(b[0, 0] - b[1, 1]) < 4 * math.hypot(se[0, 0], se[1, 1])


def test_iid_diagnostics_pass_on_real_cycles():
    rep = iid_diagnostics(collect(ModelParams(1.0, 1.0, 2.0), 100_000, 2024))
    assert rep.passed, rep


def test_all_cycles_truncated_leaves_an_empty_sample():
    s = collect(ModelParams(1.0, 1.0, 0.1, dim=2), 20, 1, event_cap=1)
    assert len(s) == 0 and s.truncated == 20 and s.dim == 2
