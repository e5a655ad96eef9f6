"""Counter-based pseudo-random stream used by the trainer.

SplitMix64 is a tiny stateless mixer: output i is a pure function of
(seed, i). That keeps parameter initialization and epoch shuffling
reproducible across platforms and numpy versions, which matters because
retraining from scratch must start from bit-identical initial weights.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Deterministic u64 / float stream derived from a single integer seed."""

    def __init__(self, seed: int) -> None:
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        return _mix(self._state)

    def next_float(self) -> float:
        # 53 significant bits, uniform in [0, 1).
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform_vector(self, size: int, low: float, high: float) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        span = high - low
        for i in range(size):
            out[i] = low + span * self.next_float()
        return out

    def shuffle(self, items: np.ndarray) -> None:
        """In-place Fisher-Yates using this stream's draws."""
        n = len(items)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]
