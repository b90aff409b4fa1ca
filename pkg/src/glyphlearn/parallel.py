"""Order-preserving parallel map over per-image work.

Results come back in input order regardless of worker count, and every
item derives its randomness from its own index, so worker parallelism can
never change a run's output bytes. Workers share read-only model state via
fork; Windows-style spawn is not supported (this package targets POSIX).
"""

from __future__ import annotations

import multiprocessing
import os

_WORKER_FN = None


def _init(fn):
    global _WORKER_FN
    _WORKER_FN = fn


def _call(item):
    return _WORKER_FN(item)


def ordered_parallel_map(fn, items, workers: int | None = None):
    """Map ``fn`` over ``items``; serial when workers <= 1."""
    items = list(items)
    workers = workers if workers is not None else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(items) or 1))
    if workers == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=workers, initializer=_init, initargs=(fn,)) as pool:
        return pool.map(_call, items)
