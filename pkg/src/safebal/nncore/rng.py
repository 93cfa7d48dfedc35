"""Seeded randomness with stable sub-stream derivation.

Every stochastic component takes an Rng (or a seed) explicitly; nothing uses
global numpy random state. Sub-seeds are derived by hashing (seed, label) so
stage streams are independent and reproducible across runs and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, label: str) -> int:
    """Stable 64-bit sub-seed for a named stage/stream."""
    digest = hashlib.blake2b(f"{master & _MASK64}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class Rng:
    """Thin wrapper over numpy's PCG64 generator with a recorded seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, label: str) -> "Rng":
        """Independent child stream identified by ``label``."""
        return Rng(derive_seed(self.seed, label))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def shuffle(self, seq):
        self.generator.shuffle(seq)

    def choice(self, seq, size=None, replace=True):
        return self.generator.choice(seq, size=size, replace=replace)

    def __repr__(self):
        return f"Rng(seed={self.seed})"
