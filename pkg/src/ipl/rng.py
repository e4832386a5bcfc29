"""Deterministic, cross-platform random number generation.

The generator is SplitMix64: the k-th output is ``mix64(seed + k * GOLDEN)``
where ``mix64`` is the standard two-multiply avalanche finalizer and GOLDEN
is the 64-bit golden-ratio constant.  All state transitions are 64-bit
integer arithmetic, so two generators with the same seed produce the same
stream on every platform.  The state is exactly (seed, position); `position`
counts how many 64-bit words have been drawn.

Floating-point outputs are derived from the integer stream (53-bit mantissa
for uniforms, Box-Muller for normals).  The *values* of normals depend on
libm's log/cos/sqrt, but the underlying integer stream never does.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ParameterError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi


def _mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _fold(value) -> int:
    """Reduce an int or str salt to a 64-bit integer."""
    if isinstance(value, str):
        acc = 0xCBF29CE484222325  # FNV-1a offset basis
        for b in value.encode("utf-8"):
            acc = ((acc ^ b) * 0x100000001B3) & _MASK64
        return acc
    return int(value) & _MASK64


class RngState:
    """Counter-based random stream with explicit (seed, position) state."""

    __slots__ = ("seed", "position")

    def __init__(self, seed: int, position: int = 0):
        self.seed = int(seed) & _MASK64
        self.position = int(position)

    def __repr__(self):
        return f"RngState(seed={self.seed:#x}, position={self.position})"

    def next_uint64(self) -> int:
        self.position += 1
        return _mix64((self.seed + self.position * _GOLDEN) & _MASK64)

    def derive(self, *salts) -> "RngState":
        """New independent stream, deterministically keyed by this seed and the salts."""
        s = _mix64(self.seed ^ 0x5851F42D4C957F2D)
        for salt in salts:
            s = _mix64((s + _GOLDEN) ^ _mix64(_fold(salt)))
        return RngState(s)

    # --- floating point -------------------------------------------------

    def random(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def normal(self) -> float:
        """Standard normal via Box-Muller; consumes exactly two 64-bit words."""
        u1 = ((self.next_uint64() >> 11) + 1) * 2.0**-53  # in (0, 1]
        u2 = (self.next_uint64() >> 11) * 2.0**-53
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)

    def normal_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.normal()
        return out.reshape(shape)

    def uniform_array(self, shape, low: float, high: float) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = self.random()
        return (low + (high - low) * out).reshape(shape)

    # --- integers and sequences -----------------------------------------

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via top-bits rejection."""
        if n <= 0:
            raise ParameterError(f"randbelow needs n >= 1, got {n}")
        bits = (n - 1).bit_length()
        if bits == 0:
            return 0
        while True:
            r = self.next_uint64() >> (64 - bits)
            if r < n:
                return r

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def sample(self, n: int, k: int) -> list[int]:
        """k distinct indices drawn uniformly from range(n), in draw order."""
        if not 0 <= k <= n:
            raise ParameterError(f"cannot sample {k} items from {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
