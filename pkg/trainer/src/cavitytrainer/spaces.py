"""Minimal box spaces (the RL frameworks this adapter targets are not
installed here; these carry just what the algorithms need)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    low: float
    high: float
    shape: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low, self.high, self.shape)

    def contains(self, x) -> bool:
        arr = np.asarray(x)
        return arr.shape == self.shape and bool(
            (arr >= self.low).all() and (arr <= self.high).all()
        )

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.low, self.high)
