"""Seeded random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``.
Replicates and evaluations derive their own generators from a master seed
and a tuple of keys, so a replicate can be rerun in isolation and produce
the same numbers it produced inside a larger batch.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(key)
    # crc32 is stable across processes, unlike hash()
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``.

    >>> a = substream(7, "ou", 3).standard_normal()
    >>> b = substream(7, "ou", 3).standard_normal()
    >>> a == b
    True
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed from ``rng`` for handing to a substream."""
    return int(rng.integers(0, 2**63 - 1))
