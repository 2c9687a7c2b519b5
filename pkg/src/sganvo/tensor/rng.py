"""Seeded counter-based random streams (Philox)."""

from __future__ import annotations

import numpy as np


class Rng:
    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0, dtype=np.float64) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(dtype, copy=False)

    def normal(self, shape, scale: float = 1.0, dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(size=shape) * scale).astype(dtype, copy=False)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def spawn(self, offset: int) -> "Rng":
        """Independent child stream keyed by ``offset``."""
        return Rng(self.seed * 1_000_003 + int(offset) + 1)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state
