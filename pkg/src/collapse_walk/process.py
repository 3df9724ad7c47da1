"""Exact event-by-event simulation of the collapsing-bond walk.

The walker attempts jumps at rate ``lam``.  An attempt picks uniformly among
the intact bonds incident to the current site; the traversed bond then
breaks with probability ``p``.  Each broken bond is repaired independently
at rate ``mu``.  If every incident bond is broken the attempt is blocked.

Simulation uses competing clocks: one exponential holding time at the total
rate ``lam + mu * len(broken)``, then a single uniform selects the attempt or
the repaired bond.  The order in which random numbers are consumed is part
of the contract, because :mod:`collapse_walk._kernels` reproduces it bit for
bit:

1. ``uniform_open`` for the holding time.
2. ``uniform`` ``u``; ``u * R < lam`` is an attempt, otherwise bond index
   ``floor((u * R - lam) / mu)`` (clamped) in storage order is repaired.
3. On an attempt with two or more intact bonds, ``uniform`` picks one of
   them; candidates are ordered by axis, then direction ``-1`` before ``+1``
   (reversed when mirrored).
4. After a traversal, and only when ``0 < p < 1``, ``uniform < p`` decides
   the break.

Broken bonds are stored in insertion order; a repair swaps the last bond
into the freed slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .rng import Stream

Point = tuple[int, ...]


class TruncationError(RuntimeError):
    """Raised when an event cap is hit before the requested stop predicate."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class ModelParams:
    lam: float
    p: float
    mu: float
    dim: int = 1

    def __post_init__(self):
        if not (isinstance(self.lam, (int, float)) and math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lambda must be a finite real > 0, got {self.lam!r}")
        if not (isinstance(self.mu, (int, float)) and math.isfinite(self.mu) and self.mu > 0):
            raise ValueError(f"mu must be a finite real > 0, got {self.mu!r}")
        if not (isinstance(self.p, (int, float)) and 0.0 <= self.p <= 1.0):
            raise ValueError(f"p must lie in [0, 1], got {self.p!r}")
        if isinstance(self.dim, bool) or not isinstance(self.dim, int) or self.dim < 1:
            raise ValueError(f"dim must be an integer >= 1, got {self.dim!r}")


@dataclass(frozen=True, order=True)
class Bond:
    """Edge between ``site`` and ``site + e_axis``."""

    site: Point
    axis: int = 0

    @classmethod
    def between(cls, a: Point, b: Point) -> "Bond":
        diff = [j - i for i, j in zip(a, b)]
        nonzero = [k for k, d in enumerate(diff) if d != 0]
        if len(nonzero) != 1 or abs(diff[nonzero[0]]) != 1:
            raise ValueError(f"{a} and {b} are not nearest neighbours")
        axis = nonzero[0]
        return cls(a if diff[axis] == 1 else b, axis)


def incident_bonds(position: Point, mirror: bool = False) -> list[tuple[Bond, int, int]]:
    """Incident bonds as ``(bond, axis, sign)`` in candidate order."""
    signs = (1, -1) if mirror else (-1, 1)
    out = []
    for axis in range(len(position)):
        for sign in signs:
            if sign < 0:
                site = position[:axis] + (position[axis] - 1,) + position[axis + 1:]
            else:
                site = position
            out.append((Bond(site, axis), axis, sign))
    return out


@dataclass(frozen=True)
class WalkerState:
    position: Point
    broken: tuple[Bond, ...] = ()
    clock: float = 0.0
    attempts: int = 0

    @classmethod
    def initial(cls, dim: int = 1) -> "WalkerState":
        return cls(position=(0,) * dim)

    @property
    def n_broken(self) -> int:
        return len(self.broken)


@dataclass(frozen=True)
class JumpSuccess:
    bond: Bond
    axis: int
    sign: int
    broke: bool


@dataclass(frozen=True)
class JumpBlocked:
    pass


@dataclass(frozen=True)
class Repair:
    bond: Bond


@dataclass(frozen=True)
class Event:
    time: float
    kind: JumpSuccess | JumpBlocked | Repair


@dataclass(frozen=True)
class StopCondition:
    """When to stop a simulation.

    ``horizon`` stops before the first event later than the horizon.
    ``regeneration`` stops at the first event after which the broken set is
    empty again, given that at least one bond has broken.  ``max_events`` is
    a cap; reaching it before a requested horizon or regeneration raises
    :class:`TruncationError`.
    """

    horizon: Optional[float] = None
    max_events: Optional[int] = None
    regeneration: bool = False

    def __post_init__(self):
        if self.horizon is None and self.max_events is None and not self.regeneration:
            raise ValueError("stop condition needs a horizon, an event cap or regeneration")
        if self.horizon is not None and self.horizon < 0:
            raise ValueError("horizon must be >= 0")


@dataclass
class Trajectory:
    params: ModelParams
    seed: int
    events: Optional[list[Event]]
    final_state: WalkerState
    n_events: int = 0
    mirror: bool = False
    initial_state: WalkerState = field(default=None)  # type: ignore[assignment]

    def positions(self) -> list[Point]:
        """Position after each recorded event."""
        if self.events is None:
            raise ValueError("trajectory was simulated without an event log")
        pos = list(self.initial_state.position)
        out = []
        for ev in self.events:
            if isinstance(ev.kind, JumpSuccess):
                pos[ev.kind.axis] += ev.kind.sign
            out.append(tuple(pos))
        return out


def total_event_rate(state: WalkerState, params: ModelParams) -> float:
    return params.lam + params.mu * len(state.broken)


def step(state: WalkerState, params: ModelParams, rng: Stream, mirror: bool = False) -> tuple[Event, WalkerState]:
    """Advance by one event.  See the module docstring for the draw order."""
    rate = total_event_rate(state, params)
    clock = state.clock - math.log(rng.uniform_open()) / rate
    x = rng.uniform() * rate
    if x < params.lam:
        broken = state.broken
        candidates = [c for c in incident_bonds(state.position, mirror) if c[0] not in broken]
        if not candidates:
            new = replace(state, clock=clock, attempts=state.attempts + 1)
            return Event(clock, JumpBlocked()), new
        if len(candidates) == 1:
            bond, axis, sign = candidates[0]
        else:
            j = min(int(rng.uniform() * len(candidates)), len(candidates) - 1)
            bond, axis, sign = candidates[j]
        p = params.p
        if p >= 1.0:
            broke = True
        elif p <= 0.0:
            broke = False
        else:
            broke = rng.uniform() < p
        pos = list(state.position)
        pos[axis] += sign
        if broke:
            broken = broken + (bond,)
        new = WalkerState(tuple(pos), broken, clock, state.attempts + 1)
        return Event(clock, JumpSuccess(bond, axis, sign, broke)), new

    k = len(state.broken)
    j = min(int((x - params.lam) / params.mu), k - 1)
    broken = list(state.broken)
    bond = broken[j]
    broken[j] = broken[-1]
    broken.pop()
    new = replace(state, broken=tuple(broken), clock=clock)
    return Event(clock, Repair(bond)), new


def simulate(
    params: ModelParams,
    seed: int,
    stop: StopCondition,
    record: bool = True,
    mirror: bool = False,
    initial: Optional[WalkerState] = None,
    rng: Optional[Stream] = None,
) -> Trajectory:
    """Run :func:`step` from ``initial`` (origin, nothing broken) until ``stop``.

    With a horizon the final clock is set to the horizon; the draw for the
    first event past the horizon is discarded.  Passing ``rng`` continues an
    existing stream instead of seeding a fresh one from ``seed``.
    """
    state = initial if initial is not None else WalkerState.initial(params.dim)
    start = state
    if rng is None:
        rng = Stream(seed)
    events: Optional[list[Event]] = [] if record else None
    n = 0
    had_break = bool(state.broken)
    horizon = stop.horizon
    cap = stop.max_events

    def done(final, reason=None):
        traj = Trajectory(params, seed, events, final, n, mirror, start)
        if reason:
            raise TruncationError(reason, traj)
        return traj

    if horizon is not None and horizon <= state.clock:
        return done(state)

    while True:
        if cap is not None and n >= cap:
            if horizon is not None or stop.regeneration:
                return done(state, f"event cap {cap} reached before stop condition")
            return done(state)
        ev, nxt = step(state, params, rng, mirror)
        if horizon is not None and ev.time > horizon:
            return done(replace(state, clock=float(horizon)))
        state = nxt
        n += 1
        if events is not None:
            events.append(ev)
        if nxt.broken:
            had_break = True
        elif stop.regeneration and had_break:
            return done(state)


def sample_positions(trajectory: Trajectory, times: Sequence[float]) -> list[Point]:
    """Right-continuous ``X(t)`` at each requested time."""
    if trajectory.events is None:
        raise ValueError("trajectory was simulated without an event log")
    end = trajectory.final_state.clock
    times = list(times)
    for t in times:
        if t < 0 or t > end:
            raise ValueError(f"time {t} outside [0, {end}]")
    if any(b < a for a, b in zip(times, times[1:])):
        raise ValueError("times must be ordered")
    pos = list(trajectory.initial_state.position)
    events = trajectory.events
    out = []
    i = 0
    for t in times:
        while i < len(events) and events[i].time <= t:
            kind = events[i].kind
            if isinstance(kind, JumpSuccess):
                pos[kind.axis] += kind.sign
            i += 1
        out.append(tuple(pos))
    return out


CSV_KINDS = {JumpSuccess: "jump", JumpBlocked: "blocked", Repair: "repair"}


def trajectory_rows(trajectory: Trajectory) -> Iterable[list]:
    """CSV rows (header first) for the event-log export."""
    dim = trajectory.params.dim
    yield (
        ["event_index", "time"]
        + ["kind"]
        + [f"dx_{k}" for k in range(dim)]
        + ["bond_site", "bond_axis", "broken_count", "attempts"]
    )
    if trajectory.events is None:
        return
    broken = len(trajectory.initial_state.broken)
    attempts = trajectory.initial_state.attempts
    for i, ev in enumerate(trajectory.events):
        kind = ev.kind
        dx = [0] * dim
        site = axis = ""
        if isinstance(kind, JumpSuccess):
            attempts += 1
            dx[kind.axis] = kind.sign
            broken += kind.broke
            site, axis = ";".join(map(str, kind.bond.site)), kind.bond.axis
        elif isinstance(kind, JumpBlocked):
            attempts += 1
        else:
            broken -= 1
            site, axis = ";".join(map(str, kind.bond.site)), kind.bond.axis
        yield [i, repr(ev.time), CSV_KINDS[type(kind)], *dx, site, axis, broken, attempts]
