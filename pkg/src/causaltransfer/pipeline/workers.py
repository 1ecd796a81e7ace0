"""Bounded worker pool for independent experiment jobs.

Jobs run through makeparallel's ``@parallel`` decorator with the pool bound set
by ``set_max_concurrent_tasks``. That bound is process-wide, so pooled calls
are serialized and each one sets its own bound before submitting. Results are
collected by the calling thread in job order, so merging needs no locks.
"""

from __future__ import annotations

import logging
import threading
from typing import Any, Callable, List, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# guards the process-wide makeparallel bound
_POOL_LOCK = threading.Lock()


def _run_inline(fn: Callable[[T], R], jobs: Sequence[T], name: str) -> List[R]:
    results = []
    for i, job in enumerate(jobs):
        logger.debug("%s %d/%d inline", name, i + 1, len(jobs))
        results.append(fn(job))
    return results


def run_jobs(fn: Callable[[T], R], jobs: Sequence[T], workers: int = 1, *, name: str = "job") -> List[R]:
    """``[fn(job) for job in jobs]``, up to ``workers`` at a time.

    The first failing job's exception is re-raised once every handle has
    been collected. Jobs must not call ``run_jobs`` with ``workers > 1``
    themselves.
    """
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return _run_inline(fn, jobs, name)

    import makeparallel as mp

    with _POOL_LOCK:
        mp.set_max_concurrent_tasks(workers)
        task = mp.parallel(fn)
        handles = []
        for i, job in enumerate(jobs):
            handle = task(job)
            handle.on_error(lambda err, i=i: logger.error("%s %d failed: %s", name, i, err,
                                                          extra={"stage": name, "job": i}))
            handles.append(handle)

        results: List[Any] = []
        first_error = None
        for handle in handles:
            try:
                results.append(handle.get())
            except Exception as exc:  # noqa: BLE001 - re-raised below
                results.append(None)
                first_error = first_error or exc
    if first_error is not None:
        raise first_error
    return results
