"""Deterministic seed derivation for every stochastic stage.

A single master seed fixes the whole pipeline: each stochastic task derives
its own seed by hashing (master, *labels), so adding or parallelising tasks
never perturbs the streams of unrelated ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEED_BYTES = 8


def derive_seed(master: int, *labels: object) -> int:
    """Derive a 63-bit child seed from a master seed and task labels."""
    digest = hashlib.sha256(repr((int(master),) + labels).encode("utf-8")).digest()
    return int.from_bytes(digest[:_SEED_BYTES], "little") >> 1


def rng_for(master: int, *labels: object) -> np.random.Generator:
    """Generator seeded by ``derive_seed(master, *labels)``."""
    return np.random.default_rng(derive_seed(master, *labels))
