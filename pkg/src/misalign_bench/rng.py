"""Deterministic 64-bit randomness for the stochastic degradation operators.

Every random draw in this package comes from SplitMix64, so a (seed, draw
order) pair fully determines the output independently of platform, Python
version, or scheduling. The state transition is::

    state_i  = (state_{i-1} + 0x9E3779B97F4A7C15) mod 2^64
    output_i = mix(state_i)

with the finalizer ``mix(z)``::

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9   (mod 2^64)
    z ^= z >> 27;  z *= 0x94D049BB133111EB   (mod 2^64)
    z ^= z >> 31

The scalar generator and the vectorized ``stream`` produce the identical
sequence. Floating-point derivations (uniforms, Box-Muller normals) are
exact given IEEE-754 double arithmetic; the integer stream is exact
unconditionally.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """SplitMix64 finalizer; also used to whiten derived seeds."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return (z ^ (z >> 31)) & MASK64


class SplitMix64:
    """Scalar SplitMix64 generator."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        """Uniform float in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) via multiply-shift reduction (bias < n/2^64)."""
        if n <= 0:
            raise ValueError(f"randbelow needs a positive bound, got {n}")
        return (self.next_u64() * n) >> 64


def stream(seed: int, n: int) -> np.ndarray:
    """First ``n`` outputs of ``SplitMix64(seed)`` as a uint64 array."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + idx * np.uint64(_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def gaussian_field(seed: int, shape: tuple[int, ...], sigma: float) -> np.ndarray:
    """Zero-mean Gaussian noise of the given shape via Box-Muller.

    Consumes 2*ceil(size/2) stream outputs: the first half become radii
    (u1 shifted into (0, 1] so the log is finite), the second half angles.
    """
    size = int(np.prod(shape)) if shape else 1
    half = (size + 1) // 2
    bits = stream(seed, 2 * half)
    u1 = ((bits[:half] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0**-53
    u2 = (bits[half:] >> np.uint64(11)).astype(np.float64) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:size]
    return (sigma * z).reshape(shape)
