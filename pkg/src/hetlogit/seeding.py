"""Deterministic seed derivation for nested RNG streams.

Every randomized stage (split, fold, network fit, replicate, bootstrap
draw) owns a seed derived from its parent seed plus a stable tag, so
results are reproducible regardless of execution order or parallelism.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map a tuple of ints/strings to a stable 32-bit seed."""
    key = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
