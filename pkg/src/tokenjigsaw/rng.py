"""Seeded random streams.

Every stochastic step in the package draws from numpy's PCG64 bit generator,
created from an explicit integer seed. Sub-streams are derived with
``SeedSequence`` spawn keys so that, for example, the shuffle of puzzle 17
never depends on how many puzzles were generated before it.
"""
import hashlib

import numpy as np

ALGORITHM = "PCG64"


def make_rng(seed, *keys):
    """Return a PCG64 generator for ``seed`` refined by optional integer/str keys."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def seed_sequence(seed, *keys):
    if seed is None:
        raise ValueError("an explicit seed is required")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            key = int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")
        entropy.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.SeedSequence(entropy)


def derive_seed(seed, *keys):
    """A 63-bit integer seed derived from ``seed`` and ``keys``."""
    return int(seed_sequence(seed, *keys).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
