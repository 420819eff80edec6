"""Seed derivation for independent random sub-streams."""

from __future__ import annotations

import hashlib
import random
import struct


def derive_seed(master: int, *keys) -> int:
    """Mix a master seed with a tuple of keys into a 64-bit seed.

    Keys may be ints or strings. The result depends only on the values,
    never on the order in which sub-streams are requested.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", master & 0xFFFFFFFFFFFFFFFF))
    for k in keys:
        if isinstance(k, int):
            h.update(b"i")
            h.update(struct.pack("<q", k))
        else:
            h.update(b"s")
            data = str(k).encode()
            h.update(struct.pack("<I", len(data)))
            h.update(data)
    return int.from_bytes(h.digest(), "little")


def substream(master: int, *keys) -> random.Random:
    return random.Random(derive_seed(master, *keys))


def uniform(master: int, *keys) -> float:
    """One uniform draw in [0, 1) keyed by (master, keys)."""
    return (derive_seed(master, *keys) >> 11) * (1.0 / (1 << 53))
