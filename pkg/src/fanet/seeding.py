"""Deterministic random streams built on the Philox counter-based generator.

Every random draw in this package comes from numpy's Philox (Philox4x64-10),
keyed with a 128-bit value `(stream_tag << 64) | (value mod 2**64)`. Distinct
stream tags keep dataset generation, parameter initialization, and epoch
shuffling statistically independent and collision-free, and make every
artifact a pure function of the user-visible seeds.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "STREAM_INSTANCE",
    "STREAM_PARAMS_ATTENTION",
    "STREAM_PARAMS_CLASSIFIER",
    "STREAM_SHUFFLE",
    "stream_rng",
    "instance_seed",
]

STREAM_INSTANCE = 1
STREAM_PARAMS_ATTENTION = 2
STREAM_PARAMS_CLASSIFIER = 3
STREAM_SHUFFLE = 4

_WORD = 2**64


def stream_rng(stream_tag: int, value: int) -> np.random.Generator:
    """Generator for one named stream; pure function of (stream_tag, value)."""
    if stream_tag < 1:
        raise ValueError(f"stream_tag must be >= 1, got {stream_tag}")
    if value < 0:
        raise ValueError(f"seed value must be >= 0, got {value}")
    key = (stream_tag << 64) | (value % _WORD)
    return np.random.Generator(np.random.Philox(key=key))


def instance_seed(master_seed: int, split_tag: int, index: int) -> int:
    """Per-instance seed with disjoint train/test streams.

    split_tag 0 = train, 1 = test; index is the instance position within the
    split. Collision-free for indices below 2**32.
    """
    if master_seed < 0 or split_tag < 0 or index < 0:
        raise ValueError("master_seed, split_tag and index must all be >= 0")
    return ((master_seed * 2 + split_tag) * 2**32 + index) % _WORD
