"""Trial fan-out over worker threads.

Kernels release the GIL and every trial is a pure function of its index, so
splitting an index range across threads never changes results.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

THREADS_ENV = "ARW_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def chunk_bounds(total: int, pieces: int) -> list[tuple[int, int]]:
    pieces = max(1, min(pieces, total)) if total else 1
    step, extra = divmod(total, pieces)
    bounds, start = [], 0
    for i in range(pieces):
        stop = start + step + (1 if i < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def map_trials(fn: Callable[[int, int], Sequence[np.ndarray]], total: int,
               threads: int | None = None, chunks_per_thread: int = 4) -> list[np.ndarray]:
    """Run ``fn(start, stop)`` over ``[0, total)`` and concatenate outputs in order."""
    threads = threads or default_threads()
    if threads == 1:
        return list(fn(0, total))
    bounds = chunk_bounds(total, threads * chunks_per_thread)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda b: fn(*b), bounds))
    return [np.concatenate(cols) for cols in zip(*parts)]
