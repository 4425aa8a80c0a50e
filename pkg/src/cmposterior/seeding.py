"""Seed derivation.

Every random stream in the package is obtained from a master integer seed
plus a tuple of integer keys (block index, repeat index, ...), through
``numpy.random.SeedSequence``'s spawn-key mechanism. Streams for different
keys are statistically independent and do not depend on the order in
which jobs run.
"""

from __future__ import annotations

import numpy as np


def generator(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))))


def child_seed(seed: int, *keys: int) -> int:
    """A derived 63-bit integer seed, for APIs that take a plain seed."""
    state = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
