"""Named, counter-based random streams.

Every consumer of randomness asks for a stream by name. The stream is keyed
by the run seed plus a digest of the name, so introducing a new consumer
never shifts the numbers an existing one sees.
"""
from __future__ import annotations

import zlib

import numpy as np


def _digest(names) -> list[int]:
    return [zlib.crc32(str(n).encode("utf-8")) for n in names]


def generator(seed: int, *names) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the stream path ``names``."""
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(seed) >> 32, *_digest(names)])
    return np.random.Generator(np.random.Philox(seq))


class Streams:
    """A seed plus a path prefix; hands out child streams by name."""

    def __init__(self, seed: int, prefix: tuple = ()):
        self.seed = int(seed)
        self.prefix = tuple(prefix)

    def child(self, *names) -> "Streams":
        return Streams(self.seed, self.prefix + names)

    def get(self, *names) -> np.random.Generator:
        return generator(self.seed, *self.prefix, *names)

    def __repr__(self):
        return f"Streams(seed={self.seed}, prefix={self.prefix!r})"
