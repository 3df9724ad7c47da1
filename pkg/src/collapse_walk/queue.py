"""The dominating M/M/inf queue and its pathwise coupling with the walk.

The queue counts customers arriving at rate ``lam * p`` and served
independently at rate ``mu``.  In a coupled run the walk's jump attempts are
split into marked attempts (the queue's arrivals) and unmarked ones, both
Poisson.  A marked attempt that traverses a bond breaks it and the bond is
matched to the arriving customer: its repair is that customer's departure.
A blocked marked attempt adds an unmatched customer.  Every broken bond is
therefore matched to a distinct customer in the system, which is what makes
``b_t <= Q_t`` hold on every path.

Named substreams keep the two marginals reproducible on their own:

* ``ARRIVALS`` - marked attempt / arrival times;
* ``SERVICE`` - the k-th arriving customer's service time;
* ``ATTEMPTS`` - unmarked attempt times;
* ``DIRECTIONS`` - choice among intact bonds.

A standalone :func:`simulate_queue` uses the first two, so its event times
are bit-identical to the queue side of a coupled run with the same seed.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .parallel import block_state, run_blocks
from .process import Bond, ModelParams, incident_bonds
from .rng import Stream, mix_seed

ARRIVALS = 1
SERVICE = 2
ATTEMPTS = 3
DIRECTIONS = 4


class CouplingViolation(AssertionError):
    """The coupled walk left the dominating queue: an implementation bug."""


def substream(seed: int, which: int) -> Stream:
    return Stream(mix_seed(seed, which))


@dataclass
class QueueTrajectory:
    arrival_rate: float
    service_rate: float
    seed: int
    times: list[float] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    customers: list[int] = field(default_factory=list)
    horizon: float = 0.0

    @property
    def final_customers(self) -> int:
        return self.customers[-1] if self.customers else 0

    def _cumulative(self, indicator=False):
        knots = np.array([0.0] + self.times + [self.horizon])
        levels = np.array([0] + self.customers, dtype=float)
        if indicator:
            levels = (levels > 0).astype(float)
        area = np.concatenate([[0.0], np.cumsum(levels * np.diff(knots))])
        return knots, area

    def time_average(self, batches: int = 20) -> tuple[float, float]:
        """Time-averaged occupancy over ``[0, horizon]`` with a batch-means SE."""
        if self.horizon <= 0:
            raise ValueError("empty horizon")
        knots, area = self._cumulative()
        edges = np.linspace(0.0, self.horizon, batches + 1)
        means = np.diff(np.interp(edges, knots, area)) / np.diff(edges)
        return float(area[-1] / self.horizon), float(means.std(ddof=1) / math.sqrt(batches))

    def busy_fraction(self) -> float:
        if self.horizon <= 0:
            return 0.0
        _, area = self._cumulative(indicator=True)
        return float(area[-1] / self.horizon)


def simulate_queue(arrival_rate: float, service_rate: float, seed: int, horizon: float,
                   max_events: Optional[int] = None) -> QueueTrajectory:
    """M/M/inf queue from empty up to ``horizon`` (or ``max_events`` events)."""
    if arrival_rate <= 0 or service_rate <= 0:
        raise ValueError("rates must be > 0")
    arrivals = substream(seed, ARRIVALS)
    service = substream(seed, SERVICE)
    out = QueueTrajectory(arrival_rate, service_rate, seed, horizon=float(horizon))
    departures: list[float] = []
    next_arrival = arrivals.exponential(arrival_rate)
    q = 0
    while max_events is None or len(out.times) < max_events:
        if departures and departures[0] <= next_arrival:
            t = departures[0]
            if t > horizon:
                break
            heapq.heappop(departures)
            q -= 1
            kind = "departure"
        else:
            t = next_arrival
            if t > horizon:
                break
            heapq.heappush(departures, t + service.exponential(service_rate))
            next_arrival = t + arrivals.exponential(arrival_rate)
            q += 1
            kind = "arrival"
        out.times.append(t)
        out.kinds.append(kind)
        out.customers.append(q)
    return out


@dataclass
class BusyCycleEstimate:
    mean: float
    se: float
    n: int
    closed_form: float

    @property
    def z_score(self) -> float:
        return (self.mean - self.closed_form) / self.se

    def to_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "n": self.n,
                "closed_form": self.closed_form, "z_score": self.z_score}


def busy_cycle_closed_form(arrival_rate: float, service_rate: float) -> float:
    return math.exp(arrival_rate / service_rate) / arrival_rate


def busy_cycle_mean(arrival_rate: float, service_rate: float, n_cycles: int, seed: int,
                    workers: int = 1) -> BusyCycleEstimate:
    """Mean empty-to-empty cycle (idle plus busy period) over ``n_cycles`` cycles."""
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    if arrival_rate <= 0 or service_rate <= 0:
        raise ValueError("rates must be > 0")

    def work(block, lo, hi):
        out = np.empty(hi - lo)
        _kernels.run_busy_cycles(block_state(seed, block), hi - lo, float(arrival_rate),
                                 float(service_rate), out)
        return out

    lengths = np.concatenate(run_blocks(work, n_cycles, workers))
    se = float(lengths.std(ddof=1) / math.sqrt(n_cycles)) if n_cycles > 1 else math.nan
    return BusyCycleEstimate(float(lengths.mean()), se, n_cycles,
                             busy_cycle_closed_form(arrival_rate, service_rate))


@dataclass
class CoupledRecord:
    params: ModelParams
    seed: int
    horizon: float
    times: list[float] = field(default_factory=list)
    events: list[str] = field(default_factory=list)
    b: list[int] = field(default_factory=list)
    q: list[int] = field(default_factory=list)
    matched: list[int] = field(default_factory=list)
    positions: list[tuple[int, ...]] = field(default_factory=list)
    matching: dict = field(default_factory=dict)
    violations: int = 0

    def rows(self):
        yield ["time", "event", "b", "q", "matched"]
        for row in zip(self.times, self.events, self.b, self.q, self.matched):
            yield [repr(row[0]), *row[1:]]

    def queue_events(self) -> list[tuple[float, str, int]]:
        return [(t, e, q) for t, e, q in zip(self.times, self.events, self.q) if e != "attempt"]


def coupled_run(params: ModelParams, seed: int, horizon: float) -> CoupledRecord:
    """Drive the walk and its dominating queue with shared randomness.

    Raises :class:`CouplingViolation` the moment ``b_t > Q_t`` or the matching
    stops being an injection from broken bonds into customers in the system.
    """
    if params.p <= 0:
        raise ValueError("p must be > 0 for the coupling")
    lam, p, mu = params.lam, params.p, params.mu
    arrivals = substream(seed, ARRIVALS)
    service = substream(seed, SERVICE)
    attempts = substream(seed, ATTEMPTS)
    directions = substream(seed, DIRECTIONS)
    marked_rate = lam * p
    unmarked_rate = lam * (1 - p)

    rec = CoupledRecord(params, seed, float(horizon))
    position = (0,) * params.dim
    broken: dict[Bond, int] = {}  # bond -> customer id
    bond_of: dict[int, Bond] = {}
    in_system: set[int] = set()
    departures: list[tuple[float, int]] = []
    next_arrival = arrivals.exponential(marked_rate)
    next_attempt = attempts.exponential(unmarked_rate) if unmarked_rate > 0 else math.inf
    customer = 0

    def traverse():
        nonlocal position
        candidates = [c for c in incident_bonds(position) if c[0] not in broken]
        if not candidates:
            return None
        if len(candidates) == 1:
            bond, axis, sign = candidates[0]
        else:
            j = min(int(directions.uniform() * len(candidates)), len(candidates) - 1)
            bond, axis, sign = candidates[j]
        pos = list(position)
        pos[axis] += sign
        position = tuple(pos)
        return bond

    while True:
        t_dep = departures[0][0] if departures else math.inf
        t = min(t_dep, next_arrival, next_attempt)
        if t > horizon:
            break
        if t == t_dep:
            _, cid = heapq.heappop(departures)
            in_system.discard(cid)
            if cid in bond_of:
                del broken[bond_of.pop(cid)]
            kind = "departure"
        elif t == next_arrival:
            cid = customer
            customer += 1
            in_system.add(cid)
            heapq.heappush(departures, (t + service.exponential(mu), cid))
            next_arrival = t + arrivals.exponential(marked_rate)
            bond = traverse()
            if bond is not None:
                broken[bond] = cid
                bond_of[cid] = bond
            kind = "arrival"
        else:
            next_attempt = t + attempts.exponential(unmarked_rate)
            traverse()
            kind = "attempt"
        b, q = len(broken), len(in_system)
        owners = set(broken.values())
        if b > q or len(owners) != b or not owners <= in_system:
            rec.violations += 1
            raise CouplingViolation(
                f"seed {seed}: b={b} > Q={q} or broken bonds not matched injectively at t={t}")
        rec.times.append(t)
        rec.events.append(kind)
        rec.b.append(b)
        rec.q.append(q)
        rec.matched.append(len(owners))
        rec.positions.append(position)
    rec.matching = dict(broken)
    return rec
