"""Named random sub-streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode())


def substream(seed: int, *names) -> np.random.Generator:
    """Generator for the stream ``names`` under ``seed``.

    The same ``(seed, names)`` always yields the same stream, independent of
    which other streams were drawn before it.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=[_key(n) for n in names]))


def subseed(seed: int, *names) -> int:
    """Integer seed for APIs that take one."""
    ss = np.random.SeedSequence(int(seed), spawn_key=[_key(n) for n in names])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
