"""Counter-based replication streams.

Stream for (master, index, stream):

    key     = [splitmix64(master mod 2^64), index mod 2^64]
    counter = [0, 0, 0, stream]
    Generator(Philox(key=key, counter=counter))

splitmix64(x): z = x + 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
z = (z ^ z>>27) * 0x94D049BB133111EB; return z ^ z>>31, all mod 2^64.
splitmix64 is a bijection, so distinct (master, index) pairs give distinct keys.
Regression vector: (0, 0) has key [0xE220A8397B1DCDAF, 0].
"""
from __future__ import annotations

from typing import Tuple

import numpy as np


MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = (x + _GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replication_key(master_seed: int, replication_index: int) -> Tuple[int, int]:
    return splitmix64(master_seed & MASK64), replication_index & MASK64


def derive_replication_seed(master_seed: int, replication_index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for one replication (or one walk block).

    ``stream`` separates the stages of a single command that draw from the
    same master seed; it occupies the top counter word, so streams never overlap.
    """
    key = np.array(replication_key(master_seed, replication_index), dtype=np.uint64)
    counter = np.array([0, 0, 0, stream & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))
