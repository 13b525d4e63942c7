"""Deterministic random substreams derived from a master seed."""
from __future__ import annotations

import numpy as np


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def substream(seed, *keys: int) -> np.random.SeedSequence:
    """Child stream addressed by ``keys``; never depends on spawn history."""
    base = as_seed_sequence(seed)
    return np.random.SeedSequence(entropy=base.entropy,
                                  spawn_key=tuple(base.spawn_key) + tuple(int(k) for k in keys))


def generator(seed, *keys: int) -> np.random.Generator:
    return np.random.default_rng(substream(seed, *keys))
