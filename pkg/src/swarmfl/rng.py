"""Counter-style random streams.

Every random draw in the simulator comes from a generator keyed by the root
seed plus a tuple of integer coordinates (round, particle, iteration, ...).
Because the generator is a pure function of its key, the order in which
workers are scheduled cannot change any result.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag(name: str) -> int:
    """Stable integer for a stream name (crc32; independent of PYTHONHASHSEED)."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    words = [int(seed) & _MASK64]
    for k in keys:
        words.append(tag(k) if isinstance(k, str) else int(k) & _MASK64)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def derive(seed: int, *keys: int | str) -> int:
    """A 63-bit child seed for APIs that take a plain integer seed."""
    words = [int(seed) & _MASK64]
    for k in keys:
        words.append(tag(k) if isinstance(k, str) else int(k) & _MASK64)
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> np.uint64(1))
