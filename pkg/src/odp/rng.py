"""Deterministic randomness with documented child-stream splitting.

A single Rng owns one numpy generator and one torch generator, both derived
from the same 64-bit seed. Parallel or structured work never shares an Rng;
it derives children via child(index) / child_named(label), which is stable
across runs and platforms for the numpy side and across runs on the same
platform for torch.
"""

from __future__ import annotations

import zlib

import numpy as np
import torch


class Rng:
    def __init__(self, seed, _spawn_key=()):
        self.seed = int(seed)
        self._spawn_key = tuple(_spawn_key)
        self._seq = np.random.SeedSequence(self.seed, spawn_key=self._spawn_key)
        self.np = np.random.Generator(np.random.PCG64(self._seq))

    def torch_gen(self) -> torch.Generator:
        """Fresh torch generator seeded from this stream's identity (not its state)."""
        g = torch.Generator()
        g.manual_seed(int(self._seq.generate_state(1, np.uint64)[0] >> 1))
        return g

    def child(self, index: int) -> "Rng":
        """Derived independent stream; (seed, spawn_key + (index,)) identifies it."""
        return Rng(self.seed, self._spawn_key + (int(index),))

    def child_named(self, label: str) -> "Rng":
        """child() keyed by a stable hash of a label, for per-image streams."""
        return self.child(zlib.crc32(label.encode("utf-8")))

    def __repr__(self):
        return f"Rng(seed={self.seed}, spawn_key={self._spawn_key})"
