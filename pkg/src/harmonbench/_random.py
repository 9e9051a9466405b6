"""Named random substreams derived from a single integer seed."""

import zlib

import numpy as np


def _key(name):
    if isinstance(name, (int, np.integer)):
        return int(name) & 0xFFFFFFFF
    return zlib.crc32(str(name).encode("utf-8"))


def substream(seed, *names):
    """Return a Generator for the stream ``names`` under ``seed``.

    Streams with different names are statistically independent, so adding a
    consumer never shifts the draws seen by another one.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_key(n) for n in names]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(seed, *names):
    """A deterministic 32-bit integer seed for a named child stream."""
    return int(substream(seed, *names).integers(0, 2**31 - 1))
