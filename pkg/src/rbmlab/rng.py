"""Counter-based random streams.

Every stochastic component draws from a stream keyed by a path such as
``(seed, replica, "noise", step)``.  Streams with distinct paths are
statistically independent, and any single stream can be reconstructed
without generating its predecessors, which is what makes replica- and
step-level parallelism deterministic.
"""
from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _splitmix64(z: int) -> int:
    # Finalizer from the splitmix64 generator; good avalanche, cheap.
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _encode(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        raise TypeError("booleans are ambiguous in stream paths")
    if isinstance(part, (int, np.integer)):
        return int(part) & _MASK64
    if isinstance(part, str):
        # crc32 is stable across platforms; label strings are few and fixed,
        # and the value is mixed with position so collisions are not a concern.
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"stream path parts must be int or str, got {type(part).__name__}")


def stream_key(seed: int, *path) -> tuple[int, int]:
    """Derive a 128-bit Philox key from a seed and a path of ints/strings."""
    h = _splitmix64(int(seed) & _MASK64)
    for pos, part in enumerate(path):
        h = _splitmix64(h ^ _splitmix64(_encode(part) ^ ((pos + 1) << 56)))
    return h, _splitmix64(h ^ 0xA5A5A5A5A5A5A5A5)


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for the given key path.

    Equal (seed, path) pairs always return generators producing identical
    output; differing in any component gives an unrelated stream.
    """
    key = np.array(stream_key(seed, *path), dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
