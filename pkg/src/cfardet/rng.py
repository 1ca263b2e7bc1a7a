"""Counter-based random streams keyed by integer/str tuples.

Every stream is a Philox generator whose key is derived from
``(master_seed, *key)`` through :class:`numpy.random.SeedSequence`, so a
draw depends only on its key and never on the order in which streams are
created.
"""

import zlib

import numpy as np


def _key_word(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError(f"stream key parts must be non-negative, got {part}")
    return part


def stream(seed, *key):
    """Return an independent generator for ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))
