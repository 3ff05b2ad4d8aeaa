"""Small shared helpers."""

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    """Thread cap for data-parallel sections; DCE_THREADS overrides."""
    env = os.environ.get("DCE_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError(f"DCE_THREADS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def ordered_parallel_map(fn, items, threads=None):
    """Map fn over items, preserving order. Results must not depend on
    scheduling; every item is computed independently."""
    items = list(items)
    n_workers = threads if threads is not None else worker_count()
    if n_workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, items))
