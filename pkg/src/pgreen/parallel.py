"""Deterministic data-parallel map.

Work items are evaluated independently and their results are placed by
index, so any reduction performed afterwards sees the same array regardless
of how many workers ran.  ``PGREEN_THREADS`` caps the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    raw = os.environ.get("PGREEN_THREADS")
    available = os.cpu_count() or 1
    if raw is None:
        return available
    try:
        return max(1, min(int(raw), available * 4))
    except ValueError:
        return 1


def pmap(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chunks(n: int, size: int) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]
