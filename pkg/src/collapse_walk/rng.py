"""Reproducible 64-bit random streams.

Every stream is a xoshiro256** generator whose 256-bit state is expanded from
a single 64-bit seed with splitmix64.  Independent streams for replicas and
for named substreams are derived with :func:`mix_seed`, a splitmix64-style
avalanche of ``(master, index)``:

    mix_seed(master, index) = fmix(master ^ fmix(index + GOLDEN))

where ``fmix`` is the splitmix64 finaliser.  The pure-Python :class:`Stream`
and the numba functions below produce bit-identical output; tests pin this.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_TWO_M53 = 2.0**-53


def _fmix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & MASK64
    return z ^ (z >> 31)


def mix_seed(master: int, index: int) -> int:
    """Derive the seed of stream ``index`` from ``master`` (both taken mod 2**64)."""
    return _fmix((master & MASK64) ^ _fmix((index + GOLDEN) & MASK64))


def expand_seed(seed: int) -> np.ndarray:
    """Expand a 64-bit seed into a xoshiro256** state (uint64[4])."""
    s = seed & MASK64
    out = []
    for _ in range(4):
        s = (s + GOLDEN) & MASK64
        out.append(_fmix(s))
    return np.array(out, dtype=np.uint64)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Stream:
    """Pure-Python xoshiro256** stream.

    Used by the reference (event-by-event) simulators.  The numba kernels in
    :mod:`collapse_walk._kernels` consume the same state layout.
    """

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        self._s = [int(v) for v in expand_seed(seed)]

    @classmethod
    def from_state(cls, state) -> "Stream":
        obj = cls.__new__(cls)
        obj._s = [int(v) for v in state]
        return obj

    @property
    def state(self) -> np.ndarray:
        return np.array(self._s, dtype=np.uint64)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _TWO_M53

    def uniform_open(self) -> float:
        """Uniform on (0, 1); never returns an endpoint."""
        return ((self.next_u64() >> 11) + 0.5) * _TWO_M53

    def exponential(self, rate: float) -> float:
        return -math.log(self.uniform_open()) / rate


# numba counterparts -------------------------------------------------------


@njit(cache=True, nogil=True)
def _nb_rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@njit(cache=True, nogil=True)
def nb_next_u64(s):
    s0 = s[0]
    s1 = s[1]
    s2 = s[2]
    s3 = s[3]
    result = _nb_rotl(s1 * np.uint64(5), 7) * np.uint64(9)
    t = s1 << np.uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _nb_rotl(s3, 45)
    s[0] = s0
    s[1] = s1
    s[2] = s2
    s[3] = s3
    return result


@njit(cache=True, nogil=True)
def nb_uniform(s):
    return float(nb_next_u64(s) >> np.uint64(11)) * _TWO_M53


@njit(cache=True, nogil=True)
def nb_uniform_open(s):
    return (float(nb_next_u64(s) >> np.uint64(11)) + 0.5) * _TWO_M53


@njit(cache=True, nogil=True)
def nb_exponential(s, rate):
    return -math.log(nb_uniform_open(s)) / rate
