"""Deterministic fan-out of independent jobs."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_threads() -> int:
    return os.cpu_count() or 1


def run_jobs(fn: Callable[[T], R], jobs: Iterable[T], threads: int = 1) -> list[R]:
    """Apply ``fn`` to each job and return results in job order.

    Results are keyed by position before being returned, so the output never
    depends on ``threads`` or on completion order.
    """
    jobs = list(jobs)
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
        futures = {i: pool.submit(fn, job) for i, job in enumerate(jobs)}
        return [futures[i].result() for i in range(len(jobs))]
