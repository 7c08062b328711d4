"""Seed derivation.

Every sub-seed is ``sha256("/".join(parts))``, first 8 bytes big-endian, top bit
cleared. ``derive_seed(42, "scene", 7, 3)`` hashes the string ``"42/scene/7/3"``.
The scheme is order-sensitive and language-independent, so any module can be
rerun on its own from the global seed.
"""
from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 63) - 1


def derive_seed(*parts) -> int:
    key = "/".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") & SEED_MASK


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(int(seed))
