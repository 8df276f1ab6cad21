"""Worker-count control for the numba kernels."""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Optional

import numba

WORKERS_ENV = "FV_WORKERS"

# prefer OpenMP; numba's default tries TBB first and warns when it is too old
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]


def default_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1, got {value}")
        return value
    return numba.config.NUMBA_NUM_THREADS


@contextmanager
def worker_threads(workers: Optional[int]):
    """Run numba parallel regions on ``workers`` threads.

    Requests above the size of numba's thread pool are capped; results never
    depend on the actual thread count.
    """
    if workers is None:
        yield
        return
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    previous = numba.get_num_threads()
    numba.set_num_threads(min(workers, numba.config.NUMBA_NUM_THREADS))
    try:
        yield
    finally:
        numba.set_num_threads(previous)
