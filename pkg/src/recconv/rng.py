"""SplitMix64 stream used for deterministic weight initialisation."""
from __future__ import annotations

import numpy as np

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Counter form of SplitMix64: word ``i`` is ``mix(seed + (i + 1) * gamma)``.

    Drawing in blocks yields exactly the same words as stepping one at a time.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * GOLDEN_GAMMA
            out = _mix(z)
        self.state = (self.state + n * int(GOLDEN_GAMMA)) & _MASK
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits of each word."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) / 2.0 ** 53

    def symmetric(self, shape, bound: float) -> np.ndarray:
        """Uniform(-bound, bound) values, consumed in row-major order."""
        n = int(np.prod(shape))
        return ((2.0 * self.uniform(n) - 1.0) * bound).reshape(shape)
