"""Deterministic random numbers via a splitmix-style 64-bit generator.

Every piece of package-internal randomness (weight init, synthetic data)
flows through :class:`Rng`, so a single seed fixes the whole run. The mix
function is the standard splitmix64 finalizer applied to a counter, which
lets whole blocks be generated vectorized.
"""

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4B91D
_MIX2 = 0x94D049BB133111EB


class Rng:
    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    def _raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words (uint64 array)."""
        base = self._state
        self._state = (base + n * _GAMMA) & _MASK
        z = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GAMMA) + np.uint64(base)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """float64 samples from [low, high), 53-bit resolution."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return (low + u * (high - low)).reshape(shape)

    def integers(self, low: int, high: int, n: int = 1) -> np.ndarray:
        """n ints from [low, high) (by rejection-free modular reduction; the
        tiny modulo bias is irrelevant for data generation)."""
        span = high - low
        return (self._raw(n) % np.uint64(span)).astype(np.int64) + low
