"""Named, reproducible random streams derived from one scenario seed."""

import zlib

import numpy as np


def derive_seed(seed: int, *names) -> np.random.SeedSequence:
    """Child seed sequence for ``seed`` keyed by a path of names/ints."""
    key = []
    for name in names:
        if isinstance(name, str):
            key.append(zlib.crc32(name.encode("utf-8")))
        else:
            key.append(int(name))
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(key))


def derive_rng(seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *names))


def derive_int(seed: int, *names) -> int:
    """A 63-bit integer sub-seed, convenient for embedding in configs/messages."""
    return int(derive_rng(seed, *names).integers(0, 2**63 - 1))
