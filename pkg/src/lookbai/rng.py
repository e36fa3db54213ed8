"""Named, counter-based random substreams.

Every random draw in the package comes from a generator obtained through
:func:`derive`, so a trial's stream depends only on ``(seed, label, index)``
and never on execution order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _seed_sequence(seed: int, label: str, index: int) -> np.random.SeedSequence:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.SeedSequence(entropy=seed, spawn_key=(zlib.crc32(label.encode()), index))


def derive(seed: int, label: str = "", index: int = 0) -> np.random.Generator:
    """Philox generator for substream ``(seed, label, index)``."""
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, label, index)))


def derive_int(seed: int, label: str = "", index: int = 0) -> int:
    """A 63-bit integer seed for substream ``(seed, label, index)``."""
    state = _seed_sequence(seed, label, index).generate_state(1, np.uint64)[0]
    return int(state) >> 1


def child_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**63 - 1))
