"""Ordered process-pool map; results never depend on the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def ordered_map(fn, items, threads: int = 1, initializer=None, initargs=()):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=threads, initializer=initializer,
                             initargs=initargs) as pool:
        return list(pool.map(fn, items))


def chunked(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    bounds = [n * k // parts for k in range(parts + 1)]
    return [range(bounds[k], bounds[k + 1]) for k in range(parts)]
