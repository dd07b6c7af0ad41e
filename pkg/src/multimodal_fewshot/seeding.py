"""Deterministic seed derivation.

One master seed reproduces an entire experiment: every stage, grid cell,
and epoch derives its own RNG stream by hashing the master seed together
with a path of names, so no stage's randomness depends on execution order.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *names) -> int:
    """Derive a 63-bit sub-seed from a master seed and a name path."""
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for name in names:
        h.update(b"/")
        h.update(str(name).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


def rng_for(master: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *names))
