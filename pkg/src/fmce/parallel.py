"""Worker-count handling.

``FMCE_THREADS`` caps the number of worker threads.  Work is always cut into
fixed-size chunks that do not depend on the worker count and results are
gathered in submission order, so outputs are identical for any setting.
BLAS is pinned to one thread for the same reason.
"""
import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

ENV_VAR = "FMCE_THREADS"


def worker_count() -> int:
    raw = os.environ.get(ENV_VAR, "").strip()
    if not raw:
        return max(1, min(4, os.cpu_count() or 1))
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{ENV_VAR} must be a positive integer, got {raw!r}")
    return n


@contextmanager
def deterministic_blas():
    with threadpool_limits(limits=1, user_api="blas"):
        yield


def ordered_map(fn, items):
    """``list(map(fn, items))`` spread over up to ``worker_count()`` threads."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
