"""Derive independent, reproducible component seeds from one global seed.

``derive_seed(seed, label)`` hashes the label with 64-bit FNV-1a, xors it into
the global seed and runs the result through the splitmix64 finalizer. Distinct
labels therefore give unrelated streams, and nothing depends on Python's
randomized ``hash``.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, label: str) -> int:
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return splitmix64(seed ^ fnv1a64(label))
