"""Worker-count control.

Kernels split their outer loop into contiguous chunks and run them on a
thread pool; every output element is computed by the same instruction
sequence whatever the chunking, so results do not depend on the count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_VAR = "MARFORGE_THREADS"

_threads: int | None = None


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get(ENV_VAR)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{ENV_VAR} must be a positive integer, got {env!r}")
        return n
    return os.cpu_count() or 1


def set_threads(n: int | None) -> None:
    """Cap the worker count; ``None`` falls back to the environment/default."""
    global _threads
    if n is not None and n < 1:
        raise ValueError("thread count must be >= 1")
    _threads = n


def run_chunked(fn, n_items: int, threads: int | None = None) -> None:
    """Call ``fn(lo, hi)`` over a partition of ``range(n_items)``."""
    threads = max(1, min(threads or get_threads(), n_items))
    if threads == 1:
        fn(0, n_items)
        return
    bounds = [n_items * k // threads for k in range(threads + 1)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
        for f in futures:
            f.result()
