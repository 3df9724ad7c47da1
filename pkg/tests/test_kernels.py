"""The compiled loops must replay the reference stepper draw for draw."""

import math

import numpy as np
import pytest

from collapse_walk.parallel import blocks, run_blocks
from collapse_walk.process import JumpSuccess, ModelParams, StopCondition, sample_positions, simulate
from collapse_walk.queue import busy_cycle_mean
from collapse_walk.regeneration import collect
from collapse_walk.rng import Stream, mix_seed
from collapse_walk.scaling import sample_paths


@pytest.mark.parametrize("params,mirror", [
    (ModelParams(1.0, 1.0, 1.0), False),
    (ModelParams(1.3, 0.4, 0.7), False),
    (ModelParams(1.0, 0.7, 2.0, dim=2), False),
    (ModelParams(1.0, 0.5, 1.0, dim=3), True),
])
def test_cycles_match_reference_stepper(params, mirror):
    seed = 314
    n = 200
    samples = collect(params, n, seed, mirror=mirror)
    rng = Stream(mix_seed(seed, 0))
    for i in range(n):
        traj = simulate(params, seed, StopCondition(regeneration=True), rng=rng, mirror=mirror)
        assert samples.delta_tau[i] == traj.final_state.clock
        assert tuple(samples.delta_x[i]) == traj.final_state.position
        assert samples.attempts[i] == traj.final_state.attempts


def test_zeta_is_first_event_after_first_break():
    params = ModelParams(1.0, 0.5, 1.0)
    samples = collect(params, 50, 8)
    rng = Stream(mix_seed(8, 0))
    for i in range(50):
        traj = simulate(params, 8, StopCondition(regeneration=True), rng=rng)
        first_break = next(k for k, e in enumerate(traj.events)
                           if isinstance(e.kind, JumpSuccess) and e.kind.broke)
        zeta = traj.events[first_break + 1]
        assert samples.zeta_time[i] == zeta.time
        assert tuple(samples.zeta_x[i]) == traj.positions()[first_break + 1]


@pytest.mark.parametrize("dim", [1, 2])
def test_horizon_runs_match_reference_stepper(dim):
    params = ModelParams(1.0, 0.5, 1.0, dim=dim)
    times = [0.0, 1.5, 7.0, 7.0, 40.0]
    paths = sample_paths(params, times, 20, seed=55)
    for r in range(20):
        traj = simulate(params, mix_seed(55, r), StopCondition(horizon=40.0))
        expected = sample_positions(traj, times)
        assert [tuple(row) for row in paths.positions[r]] == expected
        assert paths.n_events[r] == traj.n_events
        origin = (0,) * dim
        returns = [e.time for e, pos in zip(traj.events, traj.positions())
                   if isinstance(e.kind, JumpSuccess) and pos == origin]
        assert paths.first_return[r] == (returns[0] if returns else math.inf)
        assert list(paths.returns_at[r]) == [sum(t <= s for t in returns) for s in times]


def test_busy_cycles_match_reference():
    est = busy_cycle_mean(1.5, 1.0, 300, seed=6)
    rng = Stream(mix_seed(6, 0))
    lengths = []
    for _ in range(300):
        q, t = 0, 0.0
        while True:
            rate = 1.5 + q
            t += rng.exponential(rate)
            if rng.uniform() * rate < 1.5:
                q += 1
            else:
                q -= 1
                if q == 0:
                    break
        lengths.append(t)
    assert est.mean == pytest.approx(np.mean(lengths), rel=1e-13)


def test_blocks_cover_range_exactly():
    assert blocks(25_001) == [(0, 0, 10_000), (1, 10_000, 20_000), (2, 20_000, 25_001)]
    assert blocks(0) == []
    with pytest.raises(ValueError):
        run_blocks(lambda *a: a, 10, workers=0)


def test_results_independent_of_worker_count():
    params = ModelParams(1.0, 0.5, 1.0)
    a = collect(params, 35_000, 3, workers=1)
    b = collect(params, 35_000, 3, workers=4)
    assert np.array_equal(a.delta_tau, b.delta_tau)
    assert np.array_equal(a.delta_x, b.delta_x)
    pa = sample_paths(params, [5.0, 10.0], 25_000, 3, workers=1)
    pb = sample_paths(params, [5.0, 10.0], 25_000, 3, workers=3)
    assert np.array_equal(pa.positions, pb.positions)
