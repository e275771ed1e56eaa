"""Deterministic seed derivation for repeatable experiment streams."""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One step of the splitmix64 mixer (public-domain constants)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def derive_seed(base: int, *tokens) -> int:
    """Mix a base seed with arbitrary tokens into a new 64-bit seed.

    Tokens are hashed by their string form (never Python's salted hash),
    so the same (base, tokens) pair gives the same stream on any run,
    platform, or worker count.
    """
    h = hashlib.sha256()
    for tok in tokens:
        h.update(repr(tok).encode())
        h.update(b"|")
    mixed = int.from_bytes(h.digest()[:8], "little")
    return splitmix64((int(base) ^ mixed) & _MASK64)


def rng_for(base: int, *tokens) -> np.random.Generator:
    """Independent generator for the (base, tokens) stream."""
    return np.random.default_rng(derive_seed(base, *tokens))
