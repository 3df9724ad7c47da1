"""Deterministic fan-out of independent replicas.

Work is cut into fixed-size blocks whose boundaries depend only on the total
count, never on the worker count.  Block ``b`` owns the stream seeded by
``mix_seed(seed, b)``.  The compiled kernels release the GIL, so a thread
pool gives real parallelism without pickling.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

from .rng import expand_seed, mix_seed

T = TypeVar("T")

BLOCK_SIZE = 10_000


def blocks(total: int, size: int = BLOCK_SIZE) -> list[tuple[int, int, int]]:
    """``(block_index, start, stop)`` covering ``range(total)``."""
    return [(b, lo, min(lo + size, total)) for b, lo in enumerate(range(0, total, size))]


def block_state(seed: int, block: int) -> np.ndarray:
    return expand_seed(mix_seed(seed, block))


def replica_states(seed: int, start: int, stop: int) -> np.ndarray:
    """Stacked xoshiro states for replicas ``start..stop-1`` (one stream each)."""
    out = np.empty((stop - start, 4), dtype=np.uint64)
    for i, r in enumerate(range(start, stop)):
        out[i] = expand_seed(mix_seed(seed, r))
    return out


def run_blocks(fn: Callable[[int, int, int], T], total: int, workers: int = 1,
               size: int = BLOCK_SIZE) -> list[T]:
    """Apply ``fn(block, start, stop)`` to every block; results in block order."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    parts = blocks(total, size)
    if workers == 1 or len(parts) <= 1:
        return [fn(*part) for part in parts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda part: fn(*part), parts))
