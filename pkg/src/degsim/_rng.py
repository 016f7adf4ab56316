"""Deterministic random-stream derivation.

Every stochastic operation in the package draws from a counter-based Philox
generator whose key is a blake2b digest of the (seed, context...) tuple, so
results are reproducible across processes and platforms and independent
streams never collide.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_key(*parts: object) -> int:
    """Collapse arbitrary context parts into a stable 128-bit Philox key."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def make_rng(*parts: object) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))
