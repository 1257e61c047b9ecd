"""Counter-based random streams.

Every random draw comes from a Philox-4x64 generator keyed by
``SeedSequence([seed, crc32(purpose), replica])``. Streams for different
replicas or purposes never share state, so replicas can run in any order
or on any worker and still reproduce bit-for-bit.
"""

import zlib

import numpy as np

__all__ = ["RNG_ALGORITHM", "stream", "purpose_key"]

RNG_ALGORITHM = "philox4x64-10 keyed by SeedSequence([seed, crc32(purpose), replica])"

_MASK64 = (1 << 64) - 1


def purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, replica: int = 0, purpose: str = "main") -> np.random.Generator:
    """Independent generator for ``(seed, replica, purpose)``."""
    if not 0 <= int(seed) <= _MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned value, got {seed}")
    if replica < 0:
        raise ValueError("replica id must be non-negative")
    ss = np.random.SeedSequence([int(seed) & _MASK64, purpose_key(purpose), int(replica)])
    return np.random.Generator(np.random.Philox(ss))
