"""Deterministic worker-pool helper.

Workers receive a shared immutable state dict once (via the pool
initializer) and tasks are plain indices; results are returned in task
order, so output never depends on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

_STATE: dict = {}


def _init_worker(state):
    _STATE.clear()
    _STATE.update(state)


def worker_state() -> dict:
    return _STATE


def resolve_workers(workers) -> int:
    if workers is None:
        return max(1, os.cpu_count() or 1)
    workers = int(workers)
    if workers < 1:
        raise ValueError("worker count must be >= 1")
    return workers


def run_indexed(fn, n_tasks: int, state: dict, workers) -> list:
    """Evaluate fn(i) for i in range(n_tasks) under the shared state.

    With one worker everything runs in-process; otherwise a process pool is
    used and fn must be a module-level callable reading worker_state().
    """
    workers = resolve_workers(workers)
    if workers == 1 or n_tasks <= 1:
        _init_worker(state)
        return [fn(i) for i in range(n_tasks)]
    chunk = max(1, n_tasks // (4 * workers))
    with ProcessPoolExecutor(max_workers=min(workers, n_tasks),
                             initializer=_init_worker,
                             initargs=(state,)) as pool:
        return list(pool.map(fn, range(n_tasks), chunksize=chunk))
