"""Optional thread fan-out for per-sample evaluation work.

POLYGONIZER_THREADS caps the worker count (default 1, i.e. sequential).
Every unit of work is independent and internally deterministic, and results
are collected in input order, so outputs are identical at any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "POLYGONIZER_THREADS"
MAX_WORKERS = 16


def worker_count() -> int:
    raw = os.environ.get(ENV_VAR, "")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, min(n, MAX_WORKERS))


def map_samples(fn, items: list) -> list:
    """Ordered map over items, threaded when the env var allows it."""
    if worker_count() <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(fn, items))
