"""Clocks the scheduler runs against.

Both clocks expose the same three things the scheduler needs: ``now()``,
``sleep(dt)`` for load charges, and ``runner(workers)`` which starts stage
work and hands back completions one at a time. The monotonic clock runs
executors on worker threads and measures them; the virtual clock runs them
inline and advances time by their declared cost. Virtual time keeps whatever
numeric type it is fed, so ``Fraction`` costs give exact makespans.
"""
from __future__ import annotations

import heapq
import itertools
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Protocol


@dataclass
class Job:
    """One unit of stage work in flight."""

    tag: Any
    t_start: Any = None
    t_end: Any = None
    result: Any = None
    error: Optional[BaseException] = None


class Runner(Protocol):
    def start(self, tag, fn: Callable, arg, cost) -> Job: ...

    def wait_any(self) -> Job: ...

    def pending(self) -> int: ...


class Clock(Protocol):
    def now(self): ...

    def sleep(self, dt) -> None: ...

    def runner(self, workers: int) -> Runner: ...


class MonotonicClock:
    """Wall clock, zeroed at construction."""

    def __init__(self):
        self._origin = time.perf_counter()

    def now(self) -> float:
        return time.perf_counter() - self._origin

    def sleep(self, dt) -> None:
        if dt > 0:
            time.sleep(float(dt))

    def runner(self, workers: int) -> "_ThreadRunner":
        return _ThreadRunner(self, workers)


class _ThreadRunner:
    def __init__(self, clock: MonotonicClock, workers: int):
        self._clock = clock
        self._pool = ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="stage")
        self._futures = {}

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self._pool.shutdown(wait=True)

    def _run(self, job: Job, fn, arg):
        job.t_start = self._clock.now()
        try:
            job.result = fn(arg)
        except BaseException as e:  # reported through the job, never swallowed
            job.error = e
        job.t_end = self._clock.now()
        return job

    def start(self, tag, fn, arg, cost=None) -> Job:
        job = Job(tag)
        self._futures[self._pool.submit(self._run, job, fn, arg)] = job
        return job

    def pending(self) -> int:
        return len(self._futures)

    def wait_any(self) -> Job:
        if not self._futures:
            raise RuntimeError("no jobs in flight")
        done, _ = wait(list(self._futures), return_when=FIRST_COMPLETED)
        fut = min(done, key=lambda f: (self._futures[f].t_end, id(f)))
        return self._futures.pop(fut)


@dataclass
class VirtualClock:
    """Discrete-event clock. Time moves only via ``sleep`` and completions."""

    t: Any = 0
    _heap: list = field(default_factory=list, repr=False)
    _seq: Any = field(default_factory=itertools.count, repr=False)

    def now(self):
        return self.t

    def sleep(self, dt) -> None:
        if dt < 0:
            raise ValueError(f"cannot sleep a negative duration: {dt}")
        self.t = self.t + dt

    def runner(self, workers: int) -> "VirtualClock":
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self._heap.clear()

    def start(self, tag, fn, arg, cost=0) -> Job:
        if cost < 0:
            raise ValueError(f"negative stage cost: {cost}")
        job = Job(tag, t_start=self.t)
        try:
            job.result = fn(arg)
        except BaseException as e:
            job.error = e
        job.t_end = self.t + cost
        # FIFO among equal completion times
        heapq.heappush(self._heap, (job.t_end, next(self._seq), job))
        return job

    def pending(self) -> int:
        return len(self._heap)

    def wait_any(self) -> Job:
        if not self._heap:
            raise RuntimeError("no jobs in flight")
        t_end, _, job = heapq.heappop(self._heap)
        self.t = max(self.t, t_end)
        return job
