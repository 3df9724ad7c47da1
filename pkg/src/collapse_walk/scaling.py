"""Finite-n fingerprints of the diffusive scaling limit, and recurrence.

The rescaled walk ``X(n t) / sqrt(n)`` should look like Brownian motion with
variance ``beta2 / alpha`` per unit time.  Checks here are on marginals
(one-sample KS against the normal), on linear growth of ``Var X(t)`` and on
decorrelation of increments over disjoint windows.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from statistics import NormalDist
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from . import _kernels
from .parallel import replica_states, run_blocks
from .process import ModelParams
from .regeneration import DEFAULT_CONFIDENCE, collect, estimate

TRAJECTORY_EVENT_CAP = 1_000_000_000


def normal_cdf(x):
    """Standard normal CDF (Cephes ``ndtr``)."""
    return special.ndtr(x)


@dataclass
class PathSample:
    """Positions of independent replicas at a fixed time grid."""

    times: np.ndarray
    positions: np.ndarray  # (replicas, len(times), dim)
    returns_at: np.ndarray  # (replicas, len(times))
    first_return: np.ndarray
    n_events: np.ndarray
    truncated: int
    seed: int


def sample_paths(params: ModelParams, times: Sequence[float], replicas: int, seed: int,
                 workers: int = 1, mirror: bool = False) -> PathSample:
    """Run ``replicas`` walks to ``max(times)``; replica ``r`` uses stream ``mix_seed(seed, r)``."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be a nonempty, ordered, nonnegative grid")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    dim = params.dim

    def work(block, lo, hi):
        n = hi - lo
        pos = np.zeros((n, len(times), dim), dtype=np.int64)
        ret = np.zeros((n, len(times)), dtype=np.int64)
        first = np.empty(n)
        events = np.empty(n, dtype=np.int64)
        trunc = np.empty(n, dtype=np.bool_)
        _kernels.run_horizon_batch(replica_states(seed, lo, hi), float(params.lam), float(params.p),
                                   float(params.mu), dim, times, TRAJECTORY_EVENT_CAP, mirror,
                                   pos, ret, first, events, trunc)
        return pos, ret, first, events, trunc

    parts = run_blocks(work, replicas, workers)
    pos, ret, first, events, trunc = (np.concatenate([p[k] for p in parts]) for k in range(5))
    return PathSample(times, pos, ret, first, events, int(trunc.sum()), seed)


@dataclass
class MarginalSample:
    n: float
    t: float
    values: np.ndarray  # (replicas, dim), X(n t) / sqrt(n)
    seed: int

    @property
    def replicas(self) -> int:
        return self.values.shape[0]

    def rows(self):
        dim = self.values.shape[1]
        yield ["replica"] + [f"value_{k}" for k in range(dim)]
        for r, row in enumerate(self.values):
            yield [r, *map(repr, map(float, row))]


def marginal_samples(params: ModelParams, n: float, t: float, replicas: int, seed: int,
                     workers: int = 1) -> MarginalSample:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= t <= 1:
        raise ValueError("t must lie in [0, 1]")
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    paths = sample_paths(params, [n * t], replicas, seed, workers)
    return marginal_from_paths(paths, n, t, 0)


def marginal_from_paths(paths: PathSample, n: float, t: float, index: int) -> MarginalSample:
    """Rescaled positions at grid point ``index`` (which must sit at time ``n * t``)."""
    if paths.truncated:
        raise RuntimeError(f"{paths.truncated} trajectories hit the event cap")
    if not math.isclose(paths.times[index], n * t):
        raise ValueError("grid time does not match n * t")
    return MarginalSample(n, t, paths.positions[:, index, :] / math.sqrt(n), paths.seed)


@dataclass
class TestReport:
    name: str
    statistic: float
    critical_value: float
    p_value: float
    passed: bool
    sample_size: int
    seeds: list[int] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return asdict(self)


def ks_normal(values: np.ndarray) -> tuple[float, float]:
    """One-sample KS distance to N(0, 1) and its exact p-value."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    cdf = normal_cdf(x)
    upper = np.arange(1, n + 1) / n - cdf
    lower = cdf - np.arange(0, n) / n
    d = float(max(upper.max(), lower.max()))
    return d, float(stats.kstwo.sf(d, n))


def clt_test(sample: MarginalSample, coeff, level: float = 0.01) -> TestReport:
    """KS test of ``values / sqrt(coeff * t)`` against the standard normal, per coordinate.

    ``coeff`` is a scalar or a covariance-rate matrix (its diagonal is used).
    The reported statistic is the largest per-coordinate distance.
    """
    c = np.atleast_2d(np.asarray(coeff, dtype=float))
    diag = np.diag(c) if c.shape[0] > 1 else np.full(sample.values.shape[1], c[0, 0])
    if np.any(diag <= 0):
        raise ValueError("coeff must be > 0")
    if sample.t <= 0:
        raise ValueError("t must be > 0 for a CLT test")
    v = sample.values
    n = v.shape[0]
    if np.all(v == v[0]):
        raise ValueError("degenerate sample: all values equal")
    per_coord = [ks_normal(v[:, k] / math.sqrt(diag[k] * sample.t)) for k in range(v.shape[1])]
    d = max(s for s, _ in per_coord)
    crit = float(stats.kstwo.isf(level, n))
    return TestReport("clt_ks", d, crit, min(pv for _, pv in per_coord), d < crit, n, [sample.seed],
                      {"per_coordinate": [s for s, _ in per_coord], "level": level,
                       "coeff": c.tolist() if c.size > 1 else float(c[0, 0]), "n": sample.n,
                       "t": sample.t})


@dataclass
class VarianceGrowth:
    times: list[float]
    variances: list[float]
    slope: float
    intercept: float
    se_slope: float
    se_intercept: float
    replicas: int

    def to_dict(self) -> dict:
        return asdict(self)


def _ols_weights(times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    design = np.column_stack([np.ones_like(times), times])
    pinv = np.linalg.pinv(design)
    return pinv[1], pinv[0]


def fit_variance_growth(times: Sequence[float], variances: Sequence[float]) -> tuple[float, float]:
    """Least-squares ``(slope, intercept)`` of variance against time."""
    w_slope, w_icpt = _ols_weights(np.asarray(times, dtype=float))
    v = np.asarray(variances, dtype=float)
    return float(w_slope @ v), float(w_icpt @ v)


def variance_growth(paths: PathSample) -> VarianceGrowth:
    """Fit ``Var X(t) = slope * t + intercept`` over the grid of ``paths``.

    Standard errors use per-replica influence values, so the correlation
    between variances measured on the same paths is accounted for.  In d
    dims the per-coordinate variances are averaged.
    """
    times = paths.times
    x = paths.positions.astype(float)
    r = x.shape[0]
    xc = x - x.mean(axis=0)
    sq = (xc**2).mean(axis=2) * r / (r - 1)  # (replicas, times), unbiased in expectation
    variances = sq.mean(axis=0)
    w_slope, w_icpt = _ols_weights(times)
    slope, icpt = float(w_slope @ variances), float(w_icpt @ variances)
    se_s = float(np.std(sq @ w_slope, ddof=1) / math.sqrt(r))
    se_i = float(np.std(sq @ w_icpt, ddof=1) / math.sqrt(r))
    return VarianceGrowth(times.tolist(), variances.tolist(), slope, icpt, se_s, se_i, r)


def check_grid(times: Sequence[float]) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if len(times) < 5 or times.min() <= 0 or times.max() < 10 * times.min():
        raise ValueError("need at least 5 positive times spanning a decade")
    return times


def variance_linearity(params: ModelParams, times: Sequence[float], replicas: int, seed: int,
                       workers: int = 1) -> VarianceGrowth:
    times = check_grid(times)
    return variance_growth(sample_paths(params, times, replicas, seed, workers))


def increment_correlation(paths: PathSample, mid: int, end: int) -> dict:
    """Correlation of ``X(t_mid)`` with ``X(t_end) - X(t_mid)``, per coordinate."""
    first = paths.positions[:, mid, :].astype(float)
    second = paths.positions[:, end, :].astype(float) - first
    corr = []
    for k in range(first.shape[1]):
        a, b = first[:, k], second[:, k]
        if a.std() == 0 or b.std() == 0:
            corr.append(0.0)
        else:
            corr.append(float(np.corrcoef(a, b)[0, 1]))
    replicas = first.shape[0]
    band = 4 / math.sqrt(replicas)
    return {"correlation": corr, "band": band, "passed": all(abs(c) <= band for c in corr),
            "replicas": replicas}


@dataclass
class RecurrenceStats:
    horizons: list[float]
    fraction_returned: list[float]
    mean_returns: list[float]
    replicas: int
    seed: int

    def to_dict(self) -> dict:
        return asdict(self)


def recurrence_stats(params: ModelParams, horizons: Sequence[float], replicas: int, seed: int,
                     workers: int = 1) -> RecurrenceStats:
    """Fraction of walks that re-entered the origin, and mean return counts, by horizon.

    A return is a jump into the origin (every coordinate zero).  All horizons
    are read off the same trajectories, so the curve is nondecreasing.
    """
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    horizons = [float(h) for h in horizons]
    if any(b < a for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be ordered")
    paths = sample_paths(params, horizons, replicas, seed, workers)
    frac = [float(np.mean(paths.first_return <= h)) for h in horizons]
    mean_ret = paths.returns_at.mean(axis=0).tolist()
    return RecurrenceStats(horizons, frac, mean_ret, replicas, seed)


@dataclass
class CompareReport:
    ratio: float
    lower: float
    upper: float
    confidence: float
    verdict: str
    n_cycles: int
    zeta_hint: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _verdict(lo: float, hi: float) -> str:
    if lo > 1:
        return "faster"
    if hi < 1:
        return "slower"
    return "inconclusive"


def baseline_compare(params: ModelParams, cycles: int, seed: int,
                     confidence: float = DEFAULT_CONFIDENCE, workers: int = 1,
                     coeff: Optional[float] = None, se_coeff: Optional[float] = None) -> CompareReport:
    """Diffusion coefficient relative to the free walk's ``lam``.

    For ``p = 0`` the coefficient is ``lam`` exactly and the ratio is 1.  A
    precomputed ``coeff``/``se_coeff`` pair skips the regeneration run.
    """
    from .oracle import zeta_closed_forms

    if params.p == 0:
        return CompareReport(1.0, 1.0, 1.0, confidence, "inconclusive", 0)
    if coeff is None:
        est = estimate(collect(params, cycles, seed, workers), confidence)
        c, se = est.coeff, est.se_coeff
        if params.dim > 1:
            c, se = float(np.mean(np.diag(c))), float(np.sqrt(np.mean(np.diag(se) ** 2)))
        n = est.n
    else:
        c, se, n = float(coeff), float(se_coeff or 0.0), cycles
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    ratio = c / params.lam
    lo, hi = ratio - z * se / params.lam, ratio + z * se / params.lam
    hint = None
    if params.p == 1 and params.dim == 1:
        forms = zeta_closed_forms(params.lam, params.mu)
        hint = forms.gap / forms.e_zeta
    return CompareReport(ratio, lo, hi, confidence, _verdict(lo, hi), n, hint)
