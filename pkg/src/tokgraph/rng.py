"""Named, independent random streams derived from one integer seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream(seed, *names):
    """Counter-based generator keyed by ``(seed, *names)``.

    Streams with different name paths are statistically independent, so
    e.g. weight init and data generation never share draws.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))
