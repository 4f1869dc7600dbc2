"""Discrete-event core of the pilot.

One logical thread owns the clock, the core pool and the FIFO task queue.
Task durations come from the :class:`DurationModel`; with the RealWorkers
backend the payload is also executed on a thread pool and its result is
collected when the task's end event fires. Ties in time are broken by
insertion order, so the trace is reproducible for a given seed.
"""
from __future__ import annotations

import heapq
import logging
import math
from collections import deque
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .resources import (
    FaultPolicy,
    PilotError,
    PilotSpec,
    RealWorkers,
    Relaunch,
    TaskKind,
    TaskSpec,
    max_concurrency,
)

logger = logging.getLogger(__name__)


@dataclass
class Outcome:
    task: TaskSpec
    ok: bool
    result: Any = None
    error: str | None = None
    work: float = 0.0
    final: bool = True


@dataclass
class _Running:
    task: TaskSpec
    callback: Callable[[Outcome], None]
    work: float
    fails: bool
    future: Future | None


@dataclass
class Pilot:
    spec: PilotSpec
    seed: int = 0
    faults: FaultPolicy = field(default_factory=FaultPolicy)
    runner: Callable[[TaskSpec], Any] | None = None
    now: float = 0.0
    next_task_id: int = 0

    def __post_init__(self):
        self.events: list[dict] = []
        self.free = self.spec.total_cores
        self.in_use = 0
        self.peak_in_use = 0
        self.md_busy = 0.0
        self.truncated = False
        self._queue: deque = deque()
        self._heap: list = []
        self._seq = 0
        self._executor = None
        if isinstance(self.spec.backend, RealWorkers) and self.runner is not None:
            self._executor = ThreadPoolExecutor(max_workers=self.spec.backend.workers)

    # -- public API ---------------------------------------------------------

    def new_task(self, replica_id: int, kind: TaskKind, payload: Any = None,
                 cores: int | None = None, cycle: int = 0) -> TaskSpec:
        if cores is None:
            cores = self.spec.cores_per_replica if kind is not TaskKind.EXCHANGE else 1
        task = TaskSpec(self.next_task_id, replica_id, kind, cores, payload, cycle=cycle)
        self.next_task_id += 1
        return task

    def submit(self, task: TaskSpec, callback: Callable[[Outcome], None]) -> None:
        if task.cores > self.spec.total_cores:
            raise PilotError(
                f"invalid-task: task {task.task_id} needs {task.cores} cores, pilot has {self.spec.total_cores}")
        self.log("submit", task)
        self._queue.append((task, callback))
        self._dispatch()

    def after(self, delay: float, callback: Callable[[], None]) -> None:
        """Run ``callback`` ``delay`` seconds from now (timers, framework delays)."""
        self._push(self.now + delay, ("timer", callback))

    def mark(self, event: str, **fields) -> None:
        self.events.append({"t": self.now, "event": event, "task": None, "replica": None,
                            "cores": 0, **fields})

    def log(self, event: str, task: TaskSpec, **fields) -> None:
        self.events.append({"t": self.now, "event": event, "task": task.task_id,
                            "replica": task.replica_id, "cores": task.cores,
                            "kind": task.kind.value, "cycle": task.cycle, **fields})

    def run(self) -> None:
        walltime = self.spec.walltime
        try:
            while self._heap:
                t, _, item = heapq.heappop(self._heap)
                if walltime is not None and t > walltime:
                    self.truncated = True
                    self.now = walltime
                    logger.warning("walltime %.1fs exceeded; stopping with %d pending events",
                                   walltime, len(self._heap) + 1)
                    break
                self.now = t
                if item[0] == "timer":
                    item[1]()
                else:
                    self._finish(item[1])
        finally:
            self.close()

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None

    @property
    def concurrency(self) -> int:
        return max_concurrency(self.spec)

    # -- internals ----------------------------------------------------------

    def _push(self, t: float, item) -> None:
        heapq.heappush(self._heap, (t, self._seq, item))
        self._seq += 1

    def _dispatch(self) -> None:
        while self._queue and self._queue[0][0].cores <= self.free:
            task, callback = self._queue.popleft()
            self.free -= task.cores
            self.in_use += task.cores
            self.peak_in_use = max(self.peak_in_use, self.in_use)
            work = self.spec.durations.sample(task.kind, self.seed, task.task_id, task.replica_id)
            overhead = self.spec.durations.launch_overhead
            fails = task.kind is not TaskKind.EXCHANGE and self.faults.fails(self.seed, task.task_id)
            future = None
            if self._executor is not None and task.payload is not None:
                future = self._executor.submit(self.runner, task)
            self.log("start", task)
            self._push(self.now + overhead + work, ("end", _Running(task, callback, work, fails, future)))

    def _finish(self, run: _Running) -> None:
        task = run.task
        self.free += task.cores
        self.in_use -= task.cores
        result, error = None, None
        if run.future is not None:
            try:
                result = run.future.result()
            except Exception as exc:  # engine failures become task failures
                error = f"{type(exc).__name__}: {exc}"
        if run.fails and error is None:
            error = "injected fault"
        if error is None:
            if task.kind is TaskKind.MD:
                self.md_busy += run.work * task.cores
            self.log("end", task, work=run.work)
            run.callback(Outcome(task, True, result, None, run.work))
        else:
            self.log("fail", task, work=run.work, error=error)
            retry = (isinstance(self.faults.recovery, Relaunch)
                     and task.attempt < self.faults.recovery.max_retries)
            if retry:
                again = self.new_task(task.replica_id, task.kind, task.payload, task.cores, task.cycle)
                again.attempt = task.attempt + 1
                self.submit(again, run.callback)
            else:
                run.callback(Outcome(task, False, None, error, run.work))
        self._dispatch()


def task_attempts(policy: FaultPolicy, tasks: Iterable[TaskSpec], seed: int = 0):
    """Expand a task stream with injected failures and relaunches.

    Returns the list of ``(task, failed)`` attempts in order and the set of
    replica ids that ended up failed. Relaunched attempts get fresh ids
    numbered after the largest id in the input.
    """
    tasks = list(tasks)
    next_id = max((t.task_id for t in tasks), default=-1) + 1
    attempts, failed = [], set()
    for task in tasks:
        current = task
        while True:
            bad = policy.fails(seed, current.task_id)
            attempts.append((current, bad))
            if not bad:
                break
            if isinstance(policy.recovery, Relaunch) and current.attempt < policy.recovery.max_retries:
                current = TaskSpec(next_id, task.replica_id, task.kind, task.cores, task.payload,
                                   attempt=current.attempt + 1, cycle=task.cycle)
                next_id += 1
            else:
                failed.add(task.replica_id)
                break
    return attempts, failed


inject_faults = task_attempts


@dataclass
class ScheduleResult:
    events: list[dict]
    makespan: float
    peak_cores: int


def simulate_schedule(workload: Iterable[TaskSpec], pilot: PilotSpec, seed: int = 0,
                      faults: FaultPolicy | None = None) -> ScheduleResult:
    """Push a flat list of independent tasks through the virtual-clock pilot."""
    p = Pilot(pilot, seed=seed, faults=faults or FaultPolicy())
    tasks = list(workload)
    p.next_task_id = max((t.task_id for t in tasks), default=-1) + 1
    for task in tasks:
        p.submit(task, lambda outcome: None)
    p.run()
    ends = [e["t"] for e in p.events if e["event"] in ("end", "fail")]
    return ScheduleResult(p.events, max(ends, default=0.0), p.peak_in_use)


def core_usage_profile(events: Iterable[dict]) -> list[tuple[float, int]]:
    """(time, cores in use) after each start/end/fail event, in trace order."""
    in_use, out = 0, []
    for e in events:
        if e["event"] == "start":
            in_use += e["cores"]
        elif e["event"] in ("end", "fail"):
            in_use -= e["cores"]
        else:
            continue
        out.append((e["t"], in_use))
    return out


def wave_count(n_tasks: int, concurrency: int) -> int:
    return math.ceil(n_tasks / concurrency) if n_tasks else 0
