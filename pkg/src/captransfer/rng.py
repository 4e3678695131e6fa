"""Seeded splittable PRNG (splitmix64) so every run is bit-reproducible across platforms."""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2**64, matching _mix exactly
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


def derive_seed(base: int, *keys) -> int:
    """Deterministic child seed from a base seed and a chain of str/int keys.

    Used wherever independent streams are needed (per-parameter init,
    per-repeat experiment seeds). Not built-in hash(): that is salted per
    process for strings.
    """
    state = _mix(base & _MASK)
    for key in keys:
        k = _fnv1a(key) if isinstance(key, str) else (int(key) & _MASK)
        state = _mix(((state ^ k) + _GOLDEN) & _MASK)
    return state


class Rng:
    """Counter-based splitmix64 stream. Scalar and vectorized draws agree."""

    def __init__(self, seed: int):
        self._seed = int(seed) & _MASK
        self._state = self._seed

    def split(self, *keys) -> "Rng":
        """Independent child stream keyed by strings/ints; does not advance self."""
        return Rng(derive_seed(self._seed, *keys))

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return _mix(self._state)

    def next_u64_array(self, n: int) -> np.ndarray:
        states = np.uint64(self._state) + np.uint64(_GOLDEN) * np.arange(
            1, n + 1, dtype=np.uint64
        )
        self._state = (self._state + _GOLDEN * n) & _MASK
        return _mix_array(states)

    def next_below(self, n: int) -> int:
        # modulo bias is ~n/2**64, irrelevant at our sizes
        return self.next_u64() % n

    def uniform(self) -> float:
        # 53-bit mantissa in [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, n: int) -> np.ndarray:
        return (self.next_u64_array(n) >> np.uint64(11)).astype(np.float64) * (
            1.0 / (1 << 53)
        )

    def normal(self) -> float:
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> np.ndarray:
        """Box-Muller pairs; consumes 2*ceil(n/2) uniforms."""
        m = (n + 1) // 2
        u1 = self.uniforms(m)
        u2 = self.uniforms(m)
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        theta = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), uniform without replacement."""
        if k > n:
            raise ValueError(f"cannot sample {k} from {n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.next_below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]
