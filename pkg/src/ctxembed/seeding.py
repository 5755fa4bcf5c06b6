"""Deterministic per-purpose random streams derived from a single root seed.

Every source of randomness in a run (edge splitting, embedding init, epoch
shuffling, negative draws, ...) gets its own child stream keyed by a purpose
name and optional indices, so any component can be reproduced in isolation.
"""

from __future__ import annotations

import numpy as np

PURPOSES = {
    "split": 0,
    "init": 1,
    "shuffle": 2,
    "negatives": 3,
    "neighborhoods": 4,
    "dropout": 5,
    "eval": 6,
    "validation": 7,
    "generate": 8,
}


def seed_sequence(seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    """Child seed sequence for (seed, purpose, indices); stable across runs."""
    if purpose not in PURPOSES:
        raise KeyError(f"unknown rng purpose {purpose!r}")
    return np.random.SeedSequence(seed, spawn_key=(PURPOSES[purpose], *indices))


def rng_for(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Generator for (seed, purpose, indices)."""
    return np.random.default_rng(seed_sequence(seed, purpose, *indices))
