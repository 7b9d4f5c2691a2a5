"""FIFO experience replay."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError


@dataclass(frozen=True)
class Transition:
    """One experience tuple; states are (f, m, n) float64 arrays."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Ring buffer with FIFO eviction and seeded uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        if capacity <= 0:
            raise ConfigError("capacity must be positive")
        self.capacity = capacity
        self._ring: deque[Transition] = deque(maxlen=capacity)
        self._rng = np.random.default_rng(seed)

    def push(self, transition: Transition) -> None:
        self._ring.append(transition)

    def __len__(self) -> int:
        return len(self._ring)

    def __iter__(self):
        return iter(self._ring)

    def sample(self, batch_size: int) -> list[Transition]:
        """Uniform sample without replacement (with, if the buffer is small)."""
        if len(self._ring) == 0:
            raise DataError("cannot sample from an empty buffer")
        replace = batch_size > len(self._ring)
        idx = self._rng.choice(len(self._ring), size=batch_size, replace=replace)
        return [self._ring[int(i)] for i in idx]
