"""Deterministic random source.

Every stochastic piece of a run (parameter init, dropout masks, window-length
jitter, synthetic data) draws from a single seeded stream so that identical
seeds give bit-identical runs and checkpoints can resume mid-stream.
"""
from __future__ import annotations

import numpy as np


class Rng:
    """Seeded PCG64 stream with a draw counter.

    The counter exists so tests can assert that a code path (for example
    evaluation) consumed no randomness at all.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))
        self.draw_count = 0

    def random(self, shape=None) -> np.ndarray:
        """Uniform floats in [0, 1), float64."""
        self.draw_count += 1
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape=None, dtype=np.float64) -> np.ndarray:
        self.draw_count += 1
        out = self._gen.uniform(low, high, shape)
        return np.asarray(out).astype(dtype, copy=False)

    def normal(self, loc: float, scale: float) -> float:
        self.draw_count += 1
        return float(self._gen.normal(loc, scale))

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        self.draw_count += 1
        return self._gen.integers(low, high, size=shape)

    # -- state capture, for checkpointing -------------------------------

    def state(self) -> dict:
        return {
            "seed": self.seed,
            "bit_generator": self._gen.bit_generator.state,
            "draw_count": self.draw_count,
        }

    def set_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self._gen.bit_generator.state = state["bit_generator"]
        self.draw_count = int(state["draw_count"])

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        rng = cls(state["seed"])
        rng.set_state(state)
        return rng

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, draws={self.draw_count})"
