"""Deterministic reference values for one regeneration cycle in 1D.

Two sources, independent of any sampling:

* closed forms for the first post-break event ``zeta`` when ``p = 1``;
* an exhaustive expansion of the embedded jump chain, level by level, with
  paths merged on the broken set seen from the walker.

The expansion yields lower bounds (exact contributions of what has been
enumerated) together with the probability mass still unabsorbed.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass

from .process import ModelParams

PRE_BREAK = 0
ACTIVE = 1


@dataclass(frozen=True)
class ZetaForms:
    e_zeta_minus_sigma: float
    e_zeta: float
    e_x_zeta_sq: float
    gap: float

    def to_dict(self) -> dict:
        return asdict(self)


def zeta_closed_forms(lam: float, mu: float) -> ZetaForms:
    """Moments of the first event after the first break, for ``p = 1``."""
    if lam <= 0 or mu <= 0:
        raise ValueError("lam and mu must be > 0")
    total = lam + mu
    return ZetaForms(
        e_zeta_minus_sigma=1 / total,
        e_zeta=1 / lam + 1 / total,
        e_x_zeta_sq=(mu + 4 * lam) / total,
        gap=2 * lam / total,
    )


@dataclass(frozen=True)
class Enclosure:
    absorbed_value: float
    absorbed_mass: float
    residual_mass: float
    depth: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OracleResult:
    alpha: Enclosure
    x2: Enclosure
    converged: bool
    mass_tol: float
    states_visited: int

    def to_dict(self) -> dict:
        return {"alpha": self.alpha.to_dict(), "x2": self.x2.to_dict(),
                "converged": self.converged, "mass_tol": self.mass_tol,
                "states_visited": self.states_visited}


def enumerate_cycle(params: ModelParams, depth: int, mass_tol: float = 1e-10) -> OracleResult:
    """Expand the cycle's event tree until ``depth`` events or residual mass < ``mass_tol``.

    Paths are merged on the broken set seen from the walker, which carries
    the path mass together with its first two displacement moments; the
    moments move linearly under a step, so the merge is exact.

    ``alpha.absorbed_value`` accumulates ``mass / rate`` over every visited
    non-absorbed state, i.e. the expected cycle time spent within the
    enumerated levels.  ``x2.absorbed_value`` accumulates
    ``mass * displacement**2`` over absorbed paths.
    """
    if params.dim != 1:
        raise ValueError("the exact oracle covers the one-dimensional walk only")
    if params.p <= 0:
        raise ValueError("p must be > 0 for a regeneration to exist")
    if depth < 2:
        raise ValueError("depth must be >= 2")
    lam, p, mu = params.lam, params.p, params.mu

    # A state is (mask, phase).  Bit base + k of mask marks the broken bond
    # between relative sites k and k + 1; offsets never exceed the level.
    base = min(depth, 4096) + 1
    left_bit = 1 << (base - 1)
    right_bit = 1 << base
    limit = 1 << (2 * base + 1)

    # state -> [mass, sum of mass * x, sum of mass * x**2]
    frontier = {(0, PRE_BREAK): [1.0, 0.0, 0.0]}
    time_terms: list[float] = []
    x2_terms: list[float] = []
    absorbed_terms: list[float] = []
    visited = 0
    level = 0
    residual = 1.0
    while level < depth and residual >= mass_tol:
        nxt: dict = defaultdict(lambda: [0.0, 0.0, 0.0])

        def push(target, w, m, mx, mxx, sign):
            w0 = w * m
            w2 = w * (mxx + 2 * sign * mx + sign * sign * m)
            if target[1] == ACTIVE and not target[0]:
                absorbed_terms.append(w0)
                x2_terms.append(w2)
            else:
                acc = nxt[target]
                acc[0] += w0
                acc[1] += w * (mx + sign * m)
                acc[2] += w2

        for (mask, phase), (m, mx, mxx) in frontier.items():
            visited += 1
            nb = mask.bit_count()
            rate = lam + mu * nb
            time_terms.append(m / rate)
            can_left = not mask & left_bit
            can_right = not mask & right_bit
            n_intact = can_left + can_right
            if n_intact == 0:
                push((mask, phase), lam / rate, m, mx, mxx, 0)
            else:
                share = lam / rate / n_intact
                if can_left:
                    # walker moves to -1: offsets grow by one
                    shifted = mask << 1
                    if shifted >= limit:
                        raise OverflowError("broken-bond offset outside the tracked window")
                    if p > 0:
                        push((shifted | right_bit, ACTIVE), share * p, m, mx, mxx, -1)
                    if p < 1:
                        push((shifted, phase), share * (1 - p), m, mx, mxx, -1)
                if can_right:
                    if mask & 1:
                        raise OverflowError("broken-bond offset outside the tracked window")
                    shifted = mask >> 1
                    if p > 0:
                        push((shifted | left_bit, ACTIVE), share * p, m, mx, mxx, 1)
                    if p < 1:
                        push((shifted, phase), share * (1 - p), m, mx, mxx, 1)
            if nb:
                w = mu / rate
                rest = mask
                while rest:
                    low = rest & -rest
                    push((mask ^ low, phase), w, m, mx, mxx, 0)
                    rest ^= low
        frontier = nxt
        level += 1
        residual = math.fsum(v[0] for v in frontier.values())

    absorbed = math.fsum(absorbed_terms)
    alpha = Enclosure(math.fsum(sorted(time_terms)), absorbed, residual, level)
    x2 = Enclosure(math.fsum(sorted(x2_terms)), absorbed, residual, level)
    return OracleResult(alpha, x2, residual < mass_tol, mass_tol, visited)
