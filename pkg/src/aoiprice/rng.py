"""Named random streams derived from one 64-bit seed."""

import zlib

import numpy as np


def component_rng(seed: int, component: str, *index: int) -> np.random.Generator:
    """Independent generator for ``component`` (and optional run indices).

    The stream depends only on the seed and the name, so adding components or
    reordering calls never shifts another component's draws.
    """
    key = (zlib.crc32(component.encode()),) + tuple(int(i) for i in index)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=key))
