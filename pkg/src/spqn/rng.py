"""Counter-based SplitMix64 streams.

Every sample gets its own stream keyed by ``(seed, index)``; the ``k``-th
draw of a stream is a pure function of ``(seed, index, k)``.  Results are
therefore reproducible and independent of how samples are batched.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "splitmix64-counter"

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def mix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, indices) -> np.ndarray:
    base = mix(np.array([int(seed) & _MASK], dtype=np.uint64) + _GAMMA)
    idx = np.asarray(indices, dtype=np.uint64)
    return mix(base + (idx + np.uint64(1)) * _GAMMA)


def uniforms(keys: np.ndarray, counters: np.ndarray) -> np.ndarray:
    """Uniform doubles in [0, 1) for draw number ``counters`` of each stream."""
    z = mix(keys + (np.asarray(counters, dtype=np.uint64) + np.uint64(1)) * _GAMMA)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
