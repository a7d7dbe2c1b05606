"""Ordered process-pool map; results never depend on worker scheduling."""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

ENV_THREADS = "ROOTOPT_THREADS"


def worker_count(n_jobs: int | None) -> int:
    n = 1 if n_jobs is None else int(n_jobs)
    if n <= 0:
        n = os.cpu_count() or 1
    cap = os.environ.get(ENV_THREADS)
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def _chunks(items: Sequence, k: int) -> list[list]:
    size = max(1, -(-len(items) // k))
    return [list(items[i : i + size]) for i in range(0, len(items), size)]


def map_ordered(
    fn: Callable,
    items: Sequence,
    n_jobs: int | None = 1,
    initializer: Callable | None = None,
    initargs: tuple = (),
) -> list:
    """``[fn(item) for item in items]``, optionally across worker processes.

    ``initializer(*initargs)`` runs once per worker (and once in-process for the
    serial path) so large read-only context is not pickled per item.
    """
    n = worker_count(n_jobs)
    if n == 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(it) for it in items]
    chunks = _chunks(items, n * 4)
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=n, mp_context=ctx, initializer=initializer, initargs=initargs) as ex:
        parts = list(ex.map(_run_chunk, [fn] * len(chunks), chunks))
    return [r for part in parts for r in part]


def _run_chunk(fn: Callable, chunk: list) -> list:
    return [fn(it) for it in chunk]
