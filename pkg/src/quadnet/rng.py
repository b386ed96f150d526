"""Named random streams split off one root seed.

Every consumer draws from its own stream ("init", "shuffle", "noise", ...),
so adding a new consumer never perturbs the draws of existing ones.  Stream
names are hashed with crc32, which is stable across processes.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def truncated_normal(rng: np.random.Generator, shape, stddev=0.01, clip=2.0):
    """Normal(0, stddev) with draws beyond clip*stddev redrawn."""
    out = rng.normal(0.0, stddev, size=shape)
    bad = np.abs(out) > clip * stddev
    while bad.any():
        out[bad] = rng.normal(0.0, stddev, size=int(bad.sum()))
        bad = np.abs(out) > clip * stddev
    return out
