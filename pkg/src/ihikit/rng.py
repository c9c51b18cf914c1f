"""Deterministic random streams for simulation.

A handle is a value, not a stateful stream: it names a (seed, stream) pair of
a counter-based Philox generator, and every call to :meth:`generator` starts
the same sequence again.  Two handles with the same pair produce identical
samples on every platform; distinct stream ids never collide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngHandle:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream & 0xFFFFFFFFFFFFFFFF],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, n: int) -> "RngHandle":
        """Derived handle for an internal sub-stage; stays collision-free as
        long as callers use stream ids below 2**48."""
        return RngHandle(self.seed, (self.stream << 16) | (n & 0xFFFF))
