"""Named RNG sub-streams derived from one master seed.

Every consumer (parameter init per tensor, shuffling, down-sampling,
synthetic generation) draws from its own stream, so changing one factor of
a run leaves the draws of all the others untouched.
"""
from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *map(int, extra)]
    return np.random.default_rng(np.random.SeedSequence(key))


class Seeds:
    """Callable factory: ``Seeds(7)("init/tower.0.W")`` -> Generator."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def __call__(self, name: str, *extra: int) -> np.random.Generator:
        return substream(self.seed, name, *extra)
