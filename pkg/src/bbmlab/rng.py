"""Deterministic random streams for the particle engine.

Every particle owns an independent xoshiro256++ stream whose state is derived,
through a splitmix64-style key schedule, from (master seed, replica index,
birth index).  Replicas are therefore reproducible individually, results do
not depend on scheduling, iteration order, or thread count, and replica
outputs can be merged in any order.

All hot-path functions are numba-compiled and operate on a per-particle state
matrix of shape (n, 4) with dtype uint64.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_U64 = np.uint64

# splitmix64 increment and finalizer multipliers
_PHI = _U64(0x9E3779B97F4A7C15)
_M1 = _U64(0xBF58476D1CE4E5B9)
_M2 = _U64(0x94D049BB133111EB)
# decorrelation constants for the (master, replica, birth) key schedule
_K_MASTER = _U64(0x8ED0B6C8F3D2A17B)
_K_REPLICA = _U64(0xD1342543DE82EF95)
_K_BIRTH = _U64(0xDA942042E4DD58B5)

_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _mix(z):
    z = (z ^ (z >> _U64(30))) * _M1
    z = (z ^ (z >> _U64(27))) * _M2
    return z ^ (z >> _U64(31))


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (_U64(64) - k))


@njit(cache=True)
def stream_seed(master, replica, birth):
    """64-bit stream key for particle `birth` of replica `replica`."""
    a = _mix(_U64(master) + _PHI ^ _K_MASTER)
    b = _mix(a + _U64(replica) * _K_REPLICA + _PHI)
    return _mix(b + _U64(birth) * _K_BIRTH + _PHI)


@njit(cache=True)
def stream_init(state, row, master, replica, birth):
    """Fill state[row, 0:4] with the xoshiro256++ state for one particle."""
    k = stream_seed(master, replica, birth)
    nonzero = _U64(0)
    for i in range(4):
        k = k + _PHI
        w = _mix(k)
        state[row, i] = w
        nonzero |= w
    if nonzero == _U64(0):
        state[row, 0] = _U64(1)


@njit(cache=True, inline="always")
def next_u64(state, row):
    s0 = state[row, 0]
    s1 = state[row, 1]
    s2 = state[row, 2]
    s3 = state[row, 3]
    result = _rotl(s0 + s3, _U64(23)) + s0
    t = s1 << _U64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, _U64(45))
    state[row, 0] = s0
    state[row, 1] = s1
    state[row, 2] = s2
    state[row, 3] = s3
    return result


@njit(cache=True, inline="always")
def uniform(state, row):
    """U[0, 1) with 53-bit resolution; never returns 1.0."""
    return float(next_u64(state, row) >> _U64(11)) * _INV_2_53


@njit(cache=True, inline="always")
def normal(state, row):
    """Standard normal via the polar rejection method."""
    while True:
        u = 2.0 * uniform(state, row) - 1.0
        v = 2.0 * uniform(state, row) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return u * np.sqrt(-2.0 * np.log(s) / s)


@njit(cache=True, inline="always")
def exponential(state, row, rate):
    """Exp(rate) waiting time; rate must be positive."""
    return -np.log(1.0 - uniform(state, row)) / rate


class ParticleStream:
    """Python-side view of a single particle stream (tests, light sampling)."""

    def __init__(self, master: int, replica: int = 0, birth: int = 0):
        self.state = np.empty((1, 4), dtype=np.uint64)
        stream_init(self.state, 0, master, replica, birth)

    def uniform(self) -> float:
        return uniform(self.state, 0)

    def normal(self) -> float:
        return normal(self.state, 0)

    def exponential(self, rate: float) -> float:
        return exponential(self.state, 0, rate)
