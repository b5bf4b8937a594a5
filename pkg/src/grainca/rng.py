"""Seedable xoshiro256++ generator shared by all stochastic code.

The engine threads an explicit 4-word state through its kernels so that
trajectories are bit-reproducible for a given seed on any platform. The
same functions are callable from plain Python (seeding, particle
placement) and from inside numba kernels (the CAS sweep).
"""

import numpy as np
from numba import njit, uint64

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << k) | (x >> (uint64(64) - k))


@njit(cache=True)
def _seed_state_impl(seed):
    s = np.empty(4, np.uint64)
    x = seed
    for i in range(4):
        x = x + uint64(0x9E3779B97F4A7C15)
        z = x
        z = (z ^ (z >> uint64(30))) * uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> uint64(27))) * uint64(0x94D049BB133111EB)
        s[i] = z ^ (z >> uint64(31))
    return s


def seed_state(seed):
    """Expand a 64-bit seed into a xoshiro256++ state via splitmix64."""
    return _seed_state_impl(np.uint64(int(seed) & _MASK64))


@njit(cache=True, inline="always")
def next_u64(s):
    """Advance the state in place and return the next 64-bit word."""
    out = _rotl(s[0] + s[3], uint64(23)) + s[0]
    t = s[1] << uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], uint64(45))
    return out


@njit(cache=True, inline="always")
def next_double(s):
    """Uniform double in [0, 1) from the top 53 bits."""
    return (next_u64(s) >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def randbelow(s, n):
    """Uniform integer in [0, n) by masked rejection (no modulo bias)."""
    un = uint64(n)
    m = un - uint64(1)
    m |= m >> uint64(1)
    m |= m >> uint64(2)
    m |= m >> uint64(4)
    m |= m >> uint64(8)
    m |= m >> uint64(16)
    m |= m >> uint64(32)
    while True:
        x = next_u64(s) & m
        if x < un:
            return np.int64(x)


def derive_seed(base, *indices):
    """Deterministic child seed from a base seed and integer indices.

    Each sweep cell / stage gets its own stream without manual seed
    bookkeeping; collisions between distinct index tuples are as unlikely
    as splitmix64 allows.
    """
    x = int(base) & _MASK64
    for v in indices:
        x = (x + (int(v) & _MASK64) * _SPLITMIX_GAMMA) & _MASK64
        x = (x + _SPLITMIX_GAMMA) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        x = z ^ (z >> 31)
    return x
