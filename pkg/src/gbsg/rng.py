"""Counter-based pseudo-random hashing.

All randomness in the package flows from a master seed through splitmix64
finalizers keyed on logical positions (template index, voxel index, iteration,
draw slot).  A draw is a pure function of its keys, so results never depend on
scan order, worker count, or call history.  The numba backend re-implements
the same arithmetic with uint64 wraparound; both must produce identical
streams.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(x: int) -> int:
    """splitmix64 finalizer over a 64-bit lane."""
    x = (x + _GOLDEN) & MASK64
    x = ((x ^ (x >> 30)) * _MIX1) & MASK64
    x = ((x ^ (x >> 27)) * _MIX2) & MASK64
    return x ^ (x >> 31)


def hash_keys(seed: int, *keys: int) -> int:
    """Fold keys into the seed one at a time; returns a 64-bit hash."""
    h = mix64(seed & MASK64)
    for k in keys:
        h = mix64((h ^ (k & MASK64)) & MASK64)
    return h


def rand_below(seed: int, n: int, *keys: int) -> int:
    """Deterministic integer in [0, n) keyed on (seed, *keys)."""
    h = hash_keys(seed, *keys)
    return ((h >> 32) * n) >> 32


def derive_seed(seed: int, *keys: int) -> int:
    """Named sub-seed for a pipeline stage or a per-tree generator."""
    return hash_keys(seed, *keys)
