"""Deterministic, splittable random number generation.

Every stochastic component (environments, samplers, trainers) owns an
``Rng`` derived from the single run seed via ``split``.  Children are
derived by hashing ``(seed, label)`` with SHA-256, so the tree of
generators is stable across platforms and insensitive to draw order in
sibling components.  All sampling goes through integer draws or uniform
floats (counter-based Philox underneath); nothing in the sampling path
depends on platform libm behaviour.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["Rng", "derive_seed"]


def derive_seed(seed: int, label: str) -> int:
    """Derive a child seed from ``seed`` and a component label."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """Seeded wrapper around a counter-based numpy generator."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def split(self, label: str) -> "Rng":
        """Independent child generator for the named component."""
        return Rng(derive_seed(self.seed, label))

    def integers(self, low: int, high: int | None = None, size=None):
        """Uniform integers in [low, high); scalar when size is None."""
        out = self._gen.integers(low, high, size=size)
        return int(out) if size is None else out

    def random(self, size=None):
        """Uniform floats in [0, 1)."""
        out = self._gen.random(size=size)
        return float(out) if size is None else out

    def uniform(self, low: float, high: float, size=None):
        out = low + (high - low) * self._gen.random(size=size)
        return float(out) if size is None else out

    def choice(self, seq):
        """Uniform element of a non-empty sequence."""
        if len(seq) == 0:
            raise ValueError("choice from empty sequence")
        return seq[self.integers(0, len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.integers(0, i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn from range(n), in draw order."""
        if k > n:
            raise ValueError(f"cannot sample {k} distinct indices from {n}")
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]

    def categorical(self, probs) -> int:
        """Index sampled from a probability vector (sums to ~1)."""
        p = np.asarray(probs, dtype=np.float64)
        edges = np.cumsum(p)
        u = self.random() * edges[-1]
        return int(np.searchsorted(edges, u, side="right").clip(0, len(p) - 1))
