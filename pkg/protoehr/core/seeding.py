"""Derived random streams.

All randomness flows from an integer seed plus a path of keys (epoch, batch,
patient id, trial index...). Two calls with the same path get the same stream
no matter which worker evaluates them or in what order.

Examples:
    >>> rng = make_rng(7, "epoch", 3)
    >>> derive_seed(7, "patient", 12) == derive_seed(7, "patient", 12)
    True
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_entropy(key: int | str) -> int:
    if isinstance(key, int):
        return key & 0xFFFFFFFF
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_sequence(seed: int, *keys: int | str) -> np.random.SeedSequence:
    """Build a SeedSequence for ``seed`` refined by ``keys``."""
    return np.random.SeedSequence([seed & 0xFFFFFFFF, *(_key_entropy(k) for k in keys)])


def make_rng(seed: int, *keys: int | str) -> np.random.Generator:
    """Return an independent generator for the derived stream."""
    return np.random.default_rng(seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys: int | str) -> int:
    """Return a 63-bit integer seed for the derived stream."""
    state = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def derive_seed32(seed: int, *keys: int | str) -> int:
    """32-bit variant for libraries that reject wider seeds (scikit-learn)."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint32)[0])
