"""Counter-based hashing used for every source of randomness.

All randomness in the package is a pure function of integer keys, so that an
instruction, an environment site or a trial draw can be recomputed at any
time without carrying generator state around.  The mixing function is the
splitmix64 finalizer; each key component is absorbed by ``h -> mix(h + c*K)``
with an odd multiplier ``K``, which is a bijection in ``c`` for fixed ``h``.

The numba kernels in :mod:`arwlab._kernels` re-implement exactly these
formulas on ``uint64``; ``tests/test_rng.py`` pins the two against each other.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1

GOLDEN = 0x9E3779B97F4A7C15
MUL_SITE = 0xD6E8FEB86659FD93
MUL_INDEX = 0xA0761D6478BD642F
MUL_HIGH = 0xE7037ED1A0B428DB
UNIT = 2.0 ** -53
SCALE = 2.0 ** 53

# stream tags, one per independent randomness source
ORACLE = 1
ENV = 2
TRIAL = 3
POLICY = 4
PLACE = 5
DERIVE = 6


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, tag: int) -> int:
    """Key of the stream ``tag`` owned by ``seed`` (seed taken mod 2**64)."""
    return mix64((seed & MASK64) + tag * GOLDEN)


def site_key(skey: int, site: int) -> int:
    return mix64(skey + (int(site) & MASK64) * MUL_SITE)


def draw(key: int, index: int) -> int:
    """64 random bits at position ``index`` of the sequence owned by ``key``."""
    index = int(index)
    h = mix64(key + (index & MASK64) * MUL_INDEX)
    if not -(1 << 63) <= index < (1 << 64):
        # only reachable from the exact-integer Python path
        h = mix64(h + ((index >> 64) & MASK64) * MUL_HIGH)
    return h


def unit(h: int) -> float:
    """Map 64 hashed bits to a float in [0, 1) with 53-bit resolution."""
    return (h >> 11) * UNIT


def derive_seed(base_seed: int, *path: int) -> int:
    """Child seed at ``path`` below ``base_seed``; a pure function of its inputs."""
    h = stream_key(base_seed, DERIVE)
    for c in path:
        h = mix64(h + (int(c) & MASK64) * MUL_SITE)
    return h
