"""Reproducible randomness: every stream derives from one seed through a
counter-based (Philox) generator, keyed by a stream name."""

import zlib

import numpy as np


def make_rng(seed, stream=""):
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), key])))
