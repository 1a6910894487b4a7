"""Proportional prioritized replay.

Sampling probability of entry i is ``(e_i**p + delta) / sum_k (e_k**p + delta)``
with ``e_i`` the stored priority (last absolute TD error).
"""
from __future__ import annotations

import numpy as np


class InsufficientDataError(RuntimeError):
    pass


class ReplayBuffer:
    def __init__(self, capacity: int = 15000, p: float = 0.6, delta: float = 0.05, is_beta: float = 0.4):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.p = float(p)
        self.delta = float(delta)
        self.is_beta = float(is_beta)
        self._data: list = [None] * self.capacity
        self._prio = np.zeros(self.capacity, dtype=np.float64)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __getitem__(self, i: int):
        if not 0 <= i < self._size:
            raise IndexError(i)
        return self._data[i]

    @property
    def priorities(self) -> np.ndarray:
        return self._prio[:self._size].copy()

    def push(self, transition) -> None:
        prio = self._prio[:self._size].max() if self._size else 1.0
        self._data[self._next] = transition
        self._prio[self._next] = prio
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def probabilities(self) -> np.ndarray:
        scores = self._prio[:self._size] ** self.p + self.delta
        return scores / scores.sum()

    def sample(self, n: int, mode: str = "prioritized", rng: np.random.Generator | None = None):
        """Return ``(transitions, is_weights, indices)``."""
        if n < 1:
            raise ValueError("n must be >= 1")
        if self._size < n:
            raise InsufficientDataError(f"buffer holds {self._size} < {n} transitions")
        rng = rng if rng is not None else np.random.default_rng()
        if mode == "uniform":
            idx = rng.integers(0, self._size, size=n)
            weights = np.ones(n)
        elif mode == "prioritized":
            probs = self.probabilities()
            idx = rng.choice(self._size, size=n, p=probs)
            weights = (self._size * probs[idx]) ** (-self.is_beta)
            weights /= weights.max()
        else:
            raise ValueError(f"unknown sampling mode {mode!r}")
        return [self._data[i] for i in idx], weights, idx

    def update_priorities(self, indices, errors) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        errors = np.abs(np.asarray(errors, dtype=np.float64))
        if indices.shape != errors.shape:
            raise ValueError("indices and errors differ in length")
        if np.any(indices < 0) or np.any(indices >= self._size):
            raise IndexError("priority index out of range")
        self._prio[indices] = errors
