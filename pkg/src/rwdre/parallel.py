"""Replica fan-out.

Replicas are independent and each owns its random streams, so they can run
on any worker in any order. Results are returned in replica order, which
keeps every reduction deterministic. The compiled kernels release the GIL,
so a thread pool gives real parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

__all__ = ["n_workers", "map_replicas"]

T = TypeVar("T")


def n_workers() -> int:
    """Worker count: ``RWDRE_THREADS`` if set, else the CPU count."""
    env = os.environ.get("RWDRE_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"RWDRE_THREADS must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"RWDRE_THREADS must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def map_replicas(fn: Callable[[int], T], replicas: int, workers: int | None = None) -> list[T]:
    """``[fn(0), fn(1), ..., fn(replicas - 1)]``, evaluated on a worker pool."""
    workers = n_workers() if workers is None else workers
    if workers <= 1 or replicas <= 1:
        return [fn(r) for r in range(replicas)]
    with ThreadPoolExecutor(max_workers=min(workers, replicas)) as pool:
        return list(pool.map(fn, range(replicas)))
