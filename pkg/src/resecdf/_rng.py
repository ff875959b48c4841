"""Named, seedable random substreams.

Every random draw in the package comes from a PCG64 generator keyed by
``(seed, *path)``. The path is a sequence of names and integers, e.g.
``("sample-b", "MAR", 5000, 17)``. Names are hashed with CRC-32 into the
``spawn_key`` of a :class:`numpy.random.SeedSequence`, so each path gets an
independent stream that does not depend on how many other streams were
created before it, or on which worker process creates it.

Normal and uniform variates are produced by inverse-CDF transforms of
53-bit uniforms, which keeps results identical across platforms.
"""

from __future__ import annotations

import zlib

import numpy as np
from scipy.special import ndtri

_TWO53 = float(2**53)


def _key(part: str | int) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"substream index must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *path: str | int) -> np.random.Generator:
    """Return the generator for the named substream ``path`` under ``seed``."""
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))


def open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1), with 53 bits of resolution."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k.astype(np.float64) + 0.5) / _TWO53


def uniform(rng: np.random.Generator, low: float, high: float, size) -> np.ndarray:
    return low + (high - low) * open_uniform(rng, size)


def normal(rng: np.random.Generator, mean: float, sd: float, size) -> np.ndarray:
    return mean + sd * ndtri(open_uniform(rng, size))
