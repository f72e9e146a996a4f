"""Order-preserving trial fan-out."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def map_trials(fn: Callable[..., T], items: Iterable, workers: int = 1) -> list[T]:
    """``[fn(item) for item in items]``, optionally in a process pool.

    Results always come back in input order, so reductions over them do not
    depend on the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
