"""Task pool for per-volume work.

Tasks are submitted one at a time to a process pool, so idle workers pull
the next pending task (dynamic, work-stealing style scheduling). Results are
returned in submission order, never completion order.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("FORGE_WORKERS", "1") or 1)
    return max(1, int(workers))


def _init_worker():
    # one numba thread per process keeps many workers from oversubscribing cores
    from .projector import set_threads

    set_threads(1)


def parallel_map(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker) as pool:
        futures = [pool.submit(fn, item) for item in items]
        return [f.result() for f in futures]
