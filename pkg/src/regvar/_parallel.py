"""Deterministic worker-pool helper.

Results land in input order regardless of the schedule, so any thread
count produces output identical to a sequential run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def default_threads() -> int:
    value = os.environ.get("REGVAR_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def thread_map(fn, items, threads: int = 1) -> list:
    """Apply fn over items, preserving input order in the result list."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
