"""Deterministic random streams.

Every chain gets its own Philox generator family keyed by ``(seed, chain_id)``.
Separate purposes (initial state, data draws, injected noise) live on disjoint
spawn keys, so changing how an oracle consumes data never shifts the noise.
"""
from __future__ import annotations

import enum

import numpy as np

GAUSSIAN_METHOD = "numpy Generator(Philox).standard_normal (ziggurat)"
BIT_GENERATOR = "Philox4x64-10"


class Purpose(enum.IntEnum):
    INIT = 0
    DATA = 1
    NOISE = 2
    AUX = 3


def stream(seed: int, chain_id: int = 0, purpose: int = Purpose.DATA) -> np.random.Generator:
    """Generator for one (seed, chain, purpose) triple."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(chain_id), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))
