"""Regeneration cycles and the diffusion-coefficient estimators built on them.

A cycle runs from an instant with no broken bonds, through the first break,
to the next instant at which no bonds are broken.  Cycle increments
``(delta_tau, delta_x)`` are i.i.d., so the classical regenerative
estimators apply: ``alpha = E[delta_tau]``, ``beta2 = Var[delta_x]`` and the
diffusion coefficient ``beta2 / alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterator, Sequence, Union

import numpy as np
from scipy import stats

from . import _kernels
from .parallel import block_state, run_blocks
from .process import JumpSuccess, ModelParams, Repair, Trajectory

DEFAULT_CONFIDENCE = 0.99
CYCLE_EVENT_CAP = 10_000_000


@dataclass(frozen=True)
class RegenerationSample:
    delta_tau: float
    delta_x: tuple[int, ...]
    attempts_in_cycle: int = 0
    max_broken: int = 1


@dataclass
class CycleSamples:
    """Columnar store of cycles; indexing yields :class:`RegenerationSample`.

    ``zeta_time``/``zeta_x`` hold the time and position of the first event
    after the cycle's first break, measured from the cycle start.
    ``truncated`` counts cycles discarded because they hit the event cap.
    """

    delta_tau: np.ndarray
    delta_x: np.ndarray
    attempts: np.ndarray
    max_broken: np.ndarray
    zeta_time: np.ndarray = None  # type: ignore[assignment]
    zeta_x: np.ndarray = None  # type: ignore[assignment]
    truncated: int = 0

    def __post_init__(self):
        self.delta_tau = np.asarray(self.delta_tau, dtype=float)
        dx = np.asarray(self.delta_x, dtype=np.int64)
        self.delta_x = dx if dx.ndim == 2 else dx.reshape(len(self.delta_tau), -1)
        n, dim = self.delta_x.shape
        if self.zeta_time is None:
            self.zeta_time = np.full(n, np.nan)
        if self.zeta_x is None:
            self.zeta_x = np.zeros((n, dim), dtype=np.int64)

    @classmethod
    def from_records(cls, records: Sequence[RegenerationSample]) -> "CycleSamples":
        if not records:
            raise ValueError("no samples")
        return cls(
            delta_tau=np.array([r.delta_tau for r in records], dtype=float),
            delta_x=np.array([tuple(np.atleast_1d(r.delta_x)) for r in records], dtype=np.int64),
            attempts=np.array([r.attempts_in_cycle for r in records], dtype=np.int64),
            max_broken=np.array([r.max_broken for r in records], dtype=np.int64),
        )

    @property
    def dim(self) -> int:
        return self.delta_x.shape[1]

    def __len__(self) -> int:
        return len(self.delta_tau)

    def __getitem__(self, i: int) -> RegenerationSample:
        return RegenerationSample(
            float(self.delta_tau[i]),
            tuple(int(v) for v in self.delta_x[i]),
            int(self.attempts[i]),
            int(self.max_broken[i]),
        )

    def __iter__(self) -> Iterator[RegenerationSample]:
        return (self[i] for i in range(len(self)))

    def rows(self) -> Iterator[list]:
        """CSV rows, header first."""
        yield (["cycle_index", "delta_tau"]
               + [f"delta_x_{k}" for k in range(self.dim)]
               + ["attempts", "max_broken"])
        for i in range(len(self)):
            yield [i, repr(float(self.delta_tau[i])), *map(int, self.delta_x[i]),
                   int(self.attempts[i]), int(self.max_broken[i])]


SampleLike = Union[CycleSamples, Sequence[RegenerationSample]]


def _as_samples(samples: SampleLike) -> CycleSamples:
    return samples if isinstance(samples, CycleSamples) else CycleSamples.from_records(list(samples))


def collect(params: ModelParams, n_cycles: int, seed: int, workers: int = 1,
            mirror: bool = False, event_cap: int = CYCLE_EVENT_CAP) -> CycleSamples:
    """Simulate ``n_cycles`` independent cycles, each restarted at the origin.

    Cycles are generated in blocks of 10**4 per stream; the merged order is
    (block, cycle) regardless of ``workers``.
    """
    if params.p <= 0:
        raise ValueError("p = 0: no bond ever breaks, so no regeneration cycle exists")
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    dim = params.dim

    def work(block, lo, hi):
        n = hi - lo
        out = (np.empty(n), np.empty((n, dim), np.int64), np.empty(n, np.int64),
               np.empty(n, np.int64), np.full(n, np.nan), np.zeros((n, dim), np.int64),
               np.empty(n, np.bool_))
        _kernels.run_cycles(block_state(seed, block), n, float(params.lam), float(params.p),
                            float(params.mu), dim, event_cap, mirror, *out)
        return out

    parts = run_blocks(work, n_cycles, workers)
    cols = [np.concatenate([part[k] for part in parts]) for k in range(7)]
    keep = ~cols[6]
    return CycleSamples(cols[0][keep], cols[1][keep], cols[2][keep], cols[3][keep],
                        cols[4][keep], cols[5][keep], truncated=int((~keep).sum()))


def cycles_from_path(times: Sequence[float], broken_counts: Sequence[int],
                     positions: np.ndarray) -> CycleSamples:
    """Split one long run at its regeneration times.

    ``times``, ``broken_counts`` and ``positions`` describe the state after
    each event of a run that starts at time 0 at the origin with nothing
    broken.  The trailing incomplete cycle is dropped.
    """
    positions = np.asarray(positions, dtype=np.int64).reshape(len(times), -1)
    dim = positions.shape[1]
    taus, dxs, peaks, atts = [], [], [], []
    start_t, start_x = 0.0, np.zeros(dim, dtype=np.int64)
    peak = 0
    had_break = False
    for t, b, x in zip(times, broken_counts, positions):
        peak = max(peak, b)
        if b > 0:
            had_break = True
        elif had_break:
            taus.append(t - start_t)
            dxs.append(x - start_x)
            peaks.append(peak)
            atts.append(0)
            start_t, start_x = t, x.copy()
            peak = 0
            had_break = False
    return CycleSamples(np.array(taus), np.array(dxs, dtype=np.int64).reshape(-1, dim),
                        np.array(atts, dtype=np.int64), np.array(peaks, dtype=np.int64))


def cycles_from_trajectory(traj: Trajectory) -> CycleSamples:
    if traj.events is None:
        raise ValueError("trajectory was simulated without an event log")
    times, counts = [], []
    b = len(traj.initial_state.broken)
    for ev in traj.events:
        kind = ev.kind
        if isinstance(kind, JumpSuccess):
            b += kind.broke
        elif isinstance(kind, Repair):
            b -= 1
        times.append(ev.time)
        counts.append(b)
    return cycles_from_path(times, counts, np.array(traj.positions()))


@dataclass
class DiffusionEstimate:
    """Regenerative estimates; ``beta2_hat`` and ``coeff`` are matrices when dim > 1."""

    alpha_hat: float
    beta2_hat: Union[float, np.ndarray]
    coeff: Union[float, np.ndarray]
    se_alpha: float
    se_beta2: Union[float, np.ndarray]
    se_coeff: Union[float, np.ndarray]
    n: int
    confidence: float
    degenerate: bool = False

    @property
    def z(self) -> float:
        return NormalDist().inv_cdf(0.5 + self.confidence / 2)

    def interval(self, name: str):
        """Normal-approximation interval for ``alpha``, ``beta2`` or ``coeff``."""
        value = getattr(self, f"{name}_hat" if name != "coeff" else "coeff")
        se = getattr(self, f"se_{name}")
        return value - self.z * se, value + self.z * se

    def to_dict(self) -> dict:
        def conv(v):
            return v.tolist() if isinstance(v, np.ndarray) else v
        out = {k: conv(getattr(self, k)) for k in
               ("alpha_hat", "beta2_hat", "coeff", "se_alpha", "se_beta2", "se_coeff",
                "n", "confidence", "degenerate")}
        for name in ("alpha", "beta2", "coeff"):
            lo, hi = self.interval(name)
            out[f"ci_{name}"] = [conv(lo), conv(hi)]
        return out


def _se(values: np.ndarray) -> float:
    n = len(values)
    return float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.nan


def estimate(samples: SampleLike, confidence: float = DEFAULT_CONFIDENCE) -> DiffusionEstimate:
    """Sample-mean cycle length, unbiased displacement covariance, and their ratio.

    Standard errors come from per-cycle influence values; the ratio's error
    uses the delta method and keeps the covariance between numerator and
    denominator.
    """
    s = _as_samples(samples)
    n = len(s)
    if n < 2:
        raise ValueError("estimate needs at least 2 samples")
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    tau = s.delta_tau
    x = s.delta_x.astype(float)
    dim = x.shape[1]
    alpha = float(tau.mean())
    xc = x - x.mean(axis=0)
    beta2 = xc.T @ xc / (n - 1)
    coeff = beta2 / alpha

    psi_a = tau - alpha
    se_alpha = _se(tau)
    se_b = np.empty((dim, dim))
    se_c = np.empty((dim, dim))
    for a in range(dim):
        for b in range(dim):
            psi_b = xc[:, a] * xc[:, b] - beta2[a, b]
            se_b[a, b] = _se(psi_b)
            se_c[a, b] = _se(psi_b / alpha - beta2[a, b] * psi_a / alpha**2)
    degenerate = bool(np.all(beta2 == 0))
    if dim == 1:
        beta2, coeff, se_b, se_c = (float(v[0, 0]) for v in (beta2, coeff, se_b, se_c))
    return DiffusionEstimate(alpha, beta2, coeff, se_alpha, se_b, se_c, n, confidence, degenerate)


@dataclass
class Bound:
    name: str
    estimate: float
    bound: float
    se: float
    margin_se: float
    holds: bool
    violated: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class BoundReport:
    bounds: list[Bound] = field(default_factory=list)

    @property
    def violated(self) -> bool:
        return any(b.violated for b in self.bounds)

    def __getitem__(self, name: str) -> Bound:
        for b in self.bounds:
            if b.name == name:
                return b
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {b.name: b.to_dict() for b in self.bounds}


def _margin(slack: float, se: float) -> float:
    if se > 0:
        return slack / se
    return math.inf if slack > 0 else (-math.inf if slack < 0 else 0.0)


def cycle_time_bound(params: ModelParams) -> float:
    """Mean busy cycle of the dominating queue, ``exp(lam*p/mu) / (lam*p)``."""
    rate = params.lam * params.p
    return math.exp(rate / params.mu) / rate


def displacement_bound(params: ModelParams) -> float:
    """Probability of breaking at the first jump and repairing before the next."""
    return params.p * params.mu / (params.lam + params.mu)


def check_bounds(est: DiffusionEstimate, samples: SampleLike, params: ModelParams,
                 threshold: float = 3.0) -> BoundReport:
    """Margins, in standard errors, for the three cycle inequalities.

    A positive margin means the estimate sits on the permitted side.  A bound
    is flagged ``violated`` when its margin falls below ``-threshold``.
    """
    s = _as_samples(samples)
    n = len(s)
    out = []

    bound = cycle_time_bound(params)
    m = _margin(bound - est.alpha_hat, est.se_alpha)
    out.append(Bound("cycle_time", est.alpha_hat, bound, est.se_alpha, m,
                     est.alpha_hat <= bound, m < -threshold))

    l1 = np.abs(s.delta_x).sum(axis=1).astype(float)
    diff = params.lam * s.delta_tau - l1
    se = _se(diff)
    m = _margin(float(diff.mean()), se)
    out.append(Bound("mean_abs_displacement", float(l1.mean()), params.lam * est.alpha_hat, se, m,
                     float(diff.mean()) >= 0, m < -threshold))

    moved = (l1 >= 1).astype(float)
    freq = float(moved.mean())
    se = math.sqrt(freq * (1 - freq) / n)
    bound = displacement_bound(params)
    m = _margin(freq - bound, se)
    out.append(Bound("moved_fraction", freq, bound, se, m, freq >= bound, m < -threshold))
    return BoundReport(out)


@dataclass
class ZeroMeanReport:
    mean: list[float]
    se: list[float]
    lower: list[float]
    upper: list[float]
    confidence: float
    n: int
    passed: bool
    small_sample: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def mean_increment_zero_test(samples: SampleLike, confidence: float = DEFAULT_CONFIDENCE) -> ZeroMeanReport:
    """Per-coordinate normal interval for the mean displacement; passes if all contain 0."""
    s = _as_samples(samples)
    n = len(s)
    if n < 2:
        raise ValueError("need at least 2 samples")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    x = s.delta_x.astype(float)
    mean = x.mean(axis=0)
    se = x.std(axis=0, ddof=1) / math.sqrt(n)
    lo, hi = mean - z * se, mean + z * se
    passed = bool(np.all((lo <= 0) & (hi >= 0)))
    return ZeroMeanReport(mean.tolist(), se.tolist(), lo.tolist(), hi.tolist(), confidence, n,
                          passed, n < 30)


def autocorrelation(values: np.ndarray, max_lag: int) -> tuple[list[float], bool]:
    """Lag-1..max_lag sample autocorrelations; ``(zeros, True)`` for constant input."""
    v = np.asarray(values, dtype=float)
    vc = v - v.mean()
    denom = float(vc @ vc)
    if denom == 0:
        return [0.0] * max_lag, True
    return [float(vc[:-k] @ vc[k:] / denom) for k in range(1, max_lag + 1)], False


def ks_critical_2samp(n1: int, n2: int, level: float = 0.01) -> float:
    """Asymptotic two-sample Kolmogorov-Smirnov critical value."""
    c = math.sqrt(-math.log(level / 2) / 2)
    return c * math.sqrt((n1 + n2) / (n1 * n2))


@dataclass
class IidReport:
    n: int
    band: float
    autocorr_tau: list[float]
    autocorr_x: list[list[float]]
    ks_distance: float
    ks_critical: float
    degenerate: bool
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def iid_diagnostics(samples: SampleLike, max_lag: int = 5, level: float = 0.01) -> IidReport:
    """Autocorrelation bands and a first-half/second-half KS check on cycle lengths."""
    s = _as_samples(samples)
    n = len(s)
    if n < 4:
        raise ValueError("need at least 4 samples")
    band = 4 / math.sqrt(n)
    ac_tau, deg = autocorrelation(s.delta_tau, max_lag)
    ac_x = []
    for k in range(s.dim):
        ac, d = autocorrelation(s.delta_x[:, k], max_lag)
        ac_x.append(ac)
        deg = deg or d
    half = n // 2
    first, second = s.delta_tau[:half], s.delta_tau[half:]
    ks = float(stats.ks_2samp(first, second).statistic)
    crit = ks_critical_2samp(len(first), len(second), level)
    within = all(abs(r) <= band for r in ac_tau) and all(abs(r) <= band for ac in ac_x for r in ac)
    return IidReport(n, band, ac_tau, ac_x, ks, crit, deg, within and ks < crit and not deg)
