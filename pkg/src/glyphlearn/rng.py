"""Deterministic random-number streams.

Every stochastic component draws from a named substream derived from one
root seed, so a fixed seed reproduces a whole run byte-for-byte no matter
which subset of components executes.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for ``name`` under the root ``seed``.

    The stream key is derived with CRC32, which is stable across platforms
    and Python versions (unlike ``hash``).
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, key))))


def fork(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Split off ``n`` independent child generators with a single parent draw.

    Child ``i`` depends only on (parent state at fork time, ``i``), so a
    parallel map over items sees identical per-item streams regardless of
    worker count or completion order.
    """
    root = int(rng.integers(0, 2**63 - 1))
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence((root, i))))
        for i in range(n)
    ]
