"""Compiled inner loops.

These mirror :func:`collapse_walk.process.step` draw for draw; the test suite
checks them against the reference implementation on shared seeds.  Broken
bonds live in an ``int64[cap, dim + 1]`` array (site coordinates, then axis)
in insertion order with swap-last removal.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .rng import nb_exponential, nb_uniform, nb_uniform_open

JUMP = 0
JUMP_BREAK = 1
BLOCKED = 2
REPAIR = 3


@njit(cache=True, nogil=True)
def _is_broken(broken, nb, pos, axis, sign, dim):
    for r in range(nb):
        if broken[r, dim] != axis:
            continue
        same = True
        for k in range(dim):
            c = pos[k]
            if k == axis and sign < 0:
                c -= 1
            if broken[r, k] != c:
                same = False
                break
        if same:
            return True
    return False


@njit(cache=True, nogil=True)
def walk_step(rng, pos, broken, nb, lam, p, mu, dim, mirror, cand_axis, cand_sign):
    """One event.  Returns ``(code, dt, nb, broken, axis, sign)``.

    ``broken`` may be reallocated when it runs out of rows.
    """
    rate = lam + mu * nb
    dt = -math.log(nb_uniform_open(rng)) / rate
    x = nb_uniform(rng) * rate
    if x < lam:
        m = 0
        for axis in range(dim):
            for h in range(2):
                if mirror:
                    sign = 1 if h == 0 else -1
                else:
                    sign = -1 if h == 0 else 1
                if not _is_broken(broken, nb, pos, axis, sign, dim):
                    cand_axis[m] = axis
                    cand_sign[m] = sign
                    m += 1
        if m == 0:
            return BLOCKED, dt, nb, broken, -1, 0
        j = 0
        if m > 1:
            j = int(nb_uniform(rng) * m)
            if j > m - 1:
                j = m - 1
        axis = cand_axis[j]
        sign = cand_sign[j]
        if p >= 1.0:
            broke = True
        elif p <= 0.0:
            broke = False
        else:
            broke = nb_uniform(rng) < p
        if broke:
            if nb == broken.shape[0]:
                grown = np.empty((2 * broken.shape[0], dim + 1), dtype=np.int64)
                grown[:nb] = broken[:nb]
                broken = grown
            for k in range(dim):
                broken[nb, k] = pos[k]
            if sign < 0:
                broken[nb, axis] -= 1
            broken[nb, dim] = axis
            nb += 1
        pos[axis] += sign
        return (JUMP_BREAK if broke else JUMP), dt, nb, broken, axis, sign
    j = int((x - lam) / mu)
    if j > nb - 1:
        j = nb - 1
    last = nb - 1
    for k in range(dim + 1):
        broken[j, k] = broken[last, k]
    return REPAIR, dt, nb - 1, broken, -1, 0


@njit(cache=True, nogil=True)
def run_cycles(rng, n, lam, p, mu, dim, max_events, mirror,
               delta_tau, delta_x, attempts, max_broken, zeta_t, zeta_x, truncated):
    """Run ``n`` regeneration cycles back to back on one stream.

    Each cycle starts at the origin with nothing broken and ends at the
    first event leaving the broken set empty after a break.  ``zeta_*``
    record the first event after the first break.
    """
    pos = np.zeros(dim, dtype=np.int64)
    broken = np.empty((16, dim + 1), dtype=np.int64)
    cand_axis = np.empty(2 * dim, dtype=np.int64)
    cand_sign = np.empty(2 * dim, dtype=np.int64)
    for i in range(n):
        for k in range(dim):
            pos[k] = 0
        nb = 0
        t = 0.0
        att = 0
        peak = 0
        events = 0
        had_break = False
        zeta_pending = False
        truncated[i] = False
        while True:
            if events >= max_events:
                truncated[i] = True
                break
            code, dt, nb, broken, axis, sign = walk_step(
                rng, pos, broken, nb, lam, p, mu, dim, mirror, cand_axis, cand_sign)
            t += dt
            events += 1
            if code != REPAIR:
                att += 1
            if nb > peak:
                peak = nb
            if zeta_pending:
                zeta_t[i] = t
                for k in range(dim):
                    zeta_x[i, k] = pos[k]
                zeta_pending = False
            if code == JUMP_BREAK and not had_break:
                had_break = True
                zeta_pending = True
            if had_break and nb == 0:
                break
        delta_tau[i] = t
        for k in range(dim):
            delta_x[i, k] = pos[k]
        attempts[i] = att
        max_broken[i] = peak


@njit(cache=True, nogil=True)
def run_horizon(rng, lam, p, mu, dim, times, max_events, mirror, positions, returns_at):
    """Run to ``times[-1]``, recording right-continuous positions at ``times``.

    ``returns_at[j]`` counts jumps into the origin at or before ``times[j]``.
    Returns ``(first_return_time, n_events, truncated)``; the first return
    time is ``inf`` when the origin is never re-entered.
    """
    pos = np.zeros(dim, dtype=np.int64)
    broken = np.empty((16, dim + 1), dtype=np.int64)
    cand_axis = np.empty(2 * dim, dtype=np.int64)
    cand_sign = np.empty(2 * dim, dtype=np.int64)
    nt = times.shape[0]
    nb = 0
    t = 0.0
    j = 0
    returns = 0
    first = np.inf
    events = 0
    while j < nt and times[j] <= 0.0:
        for k in range(dim):
            positions[j, k] = 0
        returns_at[j] = 0
        j += 1
    if j == nt:
        return first, events, False
    horizon = times[nt - 1]
    while True:
        if events >= max_events:
            return first, events, True
        code, dt, nb, broken, axis, sign = walk_step(
            rng, pos, broken, nb, lam, p, mu, dim, mirror, cand_axis, cand_sign)
        t_next = t + dt
        while j < nt and times[j] < t_next:
            for k in range(dim):
                positions[j, k] = pos[k] - (sign if (code <= JUMP_BREAK and k == axis) else 0)
            returns_at[j] = returns
            j += 1
        if t_next > horizon:
            return first, events, False
        t = t_next
        events += 1
        if code <= JUMP_BREAK:
            at_origin = True
            for k in range(dim):
                if pos[k] != 0:
                    at_origin = False
                    break
            if at_origin:
                returns += 1
                if first == np.inf:
                    first = t


@njit(cache=True, nogil=True)
def run_horizon_batch(states, lam, p, mu, dim, times, max_events, mirror,
                      positions, returns_at, first_return, n_events, truncated):
    for r in range(states.shape[0]):
        rng = states[r]
        f, ne, tr = run_horizon(rng, lam, p, mu, dim, times, max_events, mirror,
                                positions[r], returns_at[r])
        first_return[r] = f
        n_events[r] = ne
        truncated[r] = tr


@njit(cache=True, nogil=True)
def run_busy_cycles(rng, n, arrival_rate, service_rate, lengths):
    """Empty-to-empty cycles of an M/M/inf queue by competing clocks."""
    for i in range(n):
        q = 0
        t = 0.0
        while True:
            rate = arrival_rate + service_rate * q
            t += nb_exponential(rng, rate)
            if nb_uniform(rng) * rate < arrival_rate:
                q += 1
            else:
                q -= 1
                if q == 0:
                    break
        lengths[i] = t
