"""Fork-join execution of per-subsystem work on a thread pool.

Subsystems are split into contiguous, nearly equal shards, one per worker.
Bodies write only to their own subsystem's output slots, so results do not
depend on the worker count; every call returns only after all shards finish.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

from .exceptions import SubsystemError, SubsystemExecutionError


def default_workers() -> int:
    return os.cpu_count() or 1


@dataclass(frozen=True)
class ShardPlan:
    assignments: tuple[tuple[int, ...], ...]
    worker_count: int

    def __post_init__(self):
        flat = [s for shard in self.assignments for s in shard]
        if flat != list(range(len(flat))):
            raise ValueError("shard assignments must partition range(S) contiguously")


def shard(S: int, workers: int) -> ShardPlan:
    """Contiguous balanced split of ``range(S)``; surplus workers stay idle."""
    if S < 1 or workers < 1:
        raise ValueError(f"need S >= 1 and workers >= 1, got S={S}, workers={workers}")
    base, extra = divmod(S, workers)
    out, start = [], 0
    for w in range(workers):
        size = base + (1 if w < extra else 0)
        out.append(tuple(range(start, start + size)))
        start += size
    return ShardPlan(tuple(out), workers)


def _run_shard(indices, body):
    for s in indices:
        try:
            body(s)
        except Exception as exc:  # reported with the subsystem id, lowest id wins
            return s, exc
    return None


def _raise_first(failures):
    failures = sorted(f for f in failures if f is not None)
    if not failures:
        return
    s, exc = failures[0]
    if isinstance(exc, SubsystemError):
        raise exc
    raise SubsystemExecutionError(s, f"{type(exc).__name__}: {exc}") from exc


def parallel_for_subsystems(plan: ShardPlan, body: Callable[[int], None], executor: ThreadPoolExecutor | None = None) -> None:
    """Call ``body(s)`` exactly once for every subsystem in ``plan``.

    Runs inline when there is no executor or only one non-empty shard.
    """
    shards = [a for a in plan.assignments if a]
    if executor is None or len(shards) <= 1:
        _raise_first([_run_shard(a, body) for a in shards])
        return
    futures = [executor.submit(_run_shard, a, body) for a in shards]
    _raise_first([f.result() for f in futures])


class WorkerPool:
    """Persistent pool reused across ADMM iterations.

    >>> with WorkerPool(4) as pool:
    ...     pool.run(10, lambda s: None)
    """

    def __init__(self, workers: int | None = None):
        self.workers = default_workers() if workers is None else int(workers)
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self._executor = None
        self._plans: dict[int, ShardPlan] = {}

    def __enter__(self):
        if self.workers > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def plan(self, S: int) -> ShardPlan:
        if S not in self._plans:
            self._plans[S] = shard(S, self.workers)
        return self._plans[S]

    def run(self, S: int, body: Callable[[int], None]) -> None:
        if S == 0:
            return
        parallel_for_subsystems(self.plan(S), body, self._executor)
