"""Synchronous and asynchronous replica-exchange patterns on top of the pilot."""
from __future__ import annotations

import functools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from ..engine import (
    EngineRequest,
    MDSegment,
    PotentialSystem,
    params_for,
    run_md_segment,
    single_point_energy,
)
from ..exchange import (
    ExchangeRecord,
    acceptance_delta,
    active_dimension,
    apply_swaps,
    attempt_exchanges,
    cross_energy_requests,
    phase_for,
    plan_pairs,
)
from ..metrics import CycleTiming
from ..model import ReplicaGrid, ReplicaState, ReplicaStatus
from .resources import FaultPolicy, PilotError, PilotSpec, RealWorkers, TaskKind, TaskSpec
from .scheduler import Outcome, Pilot, wave_count

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FifoN:
    """Exchange as soon as ``n`` replicas are waiting, first come first served."""

    n: int

    def __post_init__(self):
        if self.n < 1:
            raise PilotError(f"FIFO gate size must be >= 1, got {self.n}")


@dataclass(frozen=True)
class TimeWindow:
    """The first arrival opens a window; everyone arriving within ``seconds`` exchanges together."""

    seconds: float

    def __post_init__(self):
        if not self.seconds >= 0:
            raise PilotError(f"window must be >= 0 s, got {self.seconds}")


Criterion = Union[FifoN, TimeWindow]


@dataclass
class TimingRow:
    cycle: int
    dim: int
    timing: CycleTiming
    wall: float = 0.0


@dataclass
class Sample:
    cycle: int
    replica_id: int
    coords: tuple[int, ...]
    frames: np.ndarray


@dataclass
class RunLog:
    pattern: str
    grid: ReplicaGrid
    total_cores: int
    events: list[dict] = field(default_factory=list)
    exchanges: list[ExchangeRecord] = field(default_factory=list)
    timings: list[TimingRow] = field(default_factory=list)
    samples: list[Sample] = field(default_factory=list)
    md_waves: list[int] = field(default_factory=list)
    makespan: float = 0.0
    md_busy: float = 0.0
    peak_cores: int = 0
    truncated: bool = False
    wall_time: float = 0.0
    # resume point (sync runs only)
    next_cycle: int = 0
    next_task_id: int = 0
    checkpoint: dict | None = None

    @property
    def failed(self) -> list[int]:
        return [r.replica_id for r in self.grid.replicas if r.status is ReplicaStatus.FAILED]

    def utilization(self) -> float:
        from ..metrics import utilization
        return utilization(self)


def _runner(system: PotentialSystem):
    def run(task: TaskSpec):
        if task.kind is TaskKind.MD:
            return run_md_segment(system, task.payload)
        if task.kind is TaskKind.ENERGY_EVAL:
            positions, foreign = task.payload
            return single_point_energy(system, positions, foreign)
        return None
    return run


class _Driver:
    pattern = ""

    def __init__(self, grid: ReplicaGrid, system: PotentialSystem, pilot: PilotSpec,
                 segment: MDSegment, seed: int = 0, faults: FaultPolicy | None = None,
                 keep_samples: bool = False, delta_fn: Callable = acceptance_delta,
                 start_time: float = 0.0, start_task_id: int = 0,
                 on_exchange: Callable[[ReplicaGrid, ExchangeRecord], None] | None = None):
        self.grid = grid
        self.system = system
        self.spec = pilot
        self.segment = segment
        self.seed = seed
        self.keep_samples = keep_samples
        self.delta_fn = delta_fn
        self.on_exchange = on_exchange
        self.real = isinstance(pilot.backend, RealWorkers)
        self.pilot = Pilot(pilot, seed=seed, faults=faults or FaultPolicy(),
                           runner=_runner(system) if self.real else None,
                           now=start_time, next_task_id=start_task_id)
        self.log = RunLog(self.pattern, grid, pilot.total_cores)
        self.ndims = len(grid.dimensions)
        self._t0 = start_time

    # -- MD -----------------------------------------------------------------

    def submit_md(self, replica: ReplicaState, callback) -> None:
        payload = None
        if self.real:
            payload = EngineRequest(replica.positions.copy(), replica.velocities.copy(), replica.seed,
                                    params_for(self.grid, replica.coords), self.segment,
                                    cycle=replica.cycle)
        replica.status = ReplicaStatus.RUNNING_MD
        task = self.pilot.new_task(replica.replica_id, TaskKind.MD, payload, cycle=replica.cycle)
        self.pilot.submit(task, callback)

    def absorb_md(self, outcome: Outcome) -> ReplicaState:
        replica = self.grid[outcome.task.replica_id]
        if not outcome.ok:
            replica.status = ReplicaStatus.FAILED
            logger.info("replica %d failed: %s", replica.replica_id, outcome.error)
            return replica
        result = outcome.result
        if result is not None:
            replica.positions = result.positions
            replica.velocities = result.velocities
            if self.keep_samples and len(result.trajectory) > 1:
                self.log.samples.append(Sample(replica.cycle, replica.replica_id, replica.coords,
                                               result.trajectory[1:].copy()))
        replica.status = ReplicaStatus.AWAITING_EXCHANGE
        return replica

    # -- exchange phase -----------------------------------------------------

    def exchange_phase(self, members: list[ReplicaState], index: int, done) -> None:
        """Energy tasks (if the dimension needs them), data staging, then the exchange task.

        ``done(record, stats)`` runs at the exchange task's completion time.
        """
        dim = active_dimension(index, self.ndims)
        pairs = plan_pairs(members, dim, phase_for(index, self.ndims))
        for r in members:
            r.status = ReplicaStatus.IN_EXCHANGE
        stats = {"energy_span": 0.0, "energy_tasks": 0, "energy_work": 0.0,
                 "t_start": self.pilot.now}
        cross: dict[tuple[int, int], float] = {}

        def compute():
            good = [(a, b) for a, b in pairs
                    if a.status is not ReplicaStatus.FAILED and b.status is not ReplicaStatus.FAILED]
            record = attempt_exchanges(self.grid, self.system, good, dim, index, self.seed,
                                       cross, self.delta_fn)
            if self.on_exchange is not None:
                self.on_exchange(self.grid, record)
            apply_swaps(self.grid, record)
            self.log.exchanges.append(record)
            self.pilot.mark("exchange", cycle=index, dim=dim, pairs=len(record.pairs),
                            accepted=record.accepted_count)
            done(record, stats)

        def stage_exchange():
            stats["energy_span"] = self.pilot.now - stats["t_start"]
            if self.spec.durations.data_time > 0:
                self.pilot.after(self.spec.durations.data_time, submit_exchange)
            else:
                submit_exchange()

        def submit_exchange():
            task = self.pilot.new_task(-1, TaskKind.EXCHANGE, cycle=index)

            def finished(outcome: Outcome):
                stats["exchange_work"] = outcome.work
                compute()
            self.pilot.submit(task, finished)

        requests = []
        if self.grid.dimensions[dim].kind.needs_energy_tasks:
            requests = cross_energy_requests(self.grid, pairs)
        if not requests:
            stage_exchange()
            return
        pending = {"n": len(requests)}

        def energy_done(key, outcome: Outcome):
            stats["energy_work"] = max(stats["energy_work"], outcome.work)
            if outcome.ok:
                if outcome.result is not None:
                    cross[key] = float(outcome.result)
            else:
                self.grid[outcome.task.replica_id].status = ReplicaStatus.FAILED
            pending["n"] -= 1
            if pending["n"] == 0:
                self.pilot.mark("barrier", phase="energy", cycle=index)
                stage_exchange()

        for evaluator, owner, foreign in requests:
            r = self.grid[evaluator]
            payload = (r.positions.copy(), foreign) if self.real else None
            task = self.pilot.new_task(evaluator, TaskKind.ENERGY_EVAL, payload, cycle=index)
            stats["energy_tasks"] += 1
            self.pilot.submit(task, functools.partial(energy_done, (owner, evaluator)))

    def finish(self) -> RunLog:
        wall0 = time.perf_counter()
        self.pilot.run()
        self.log.wall_time = time.perf_counter() - wall0
        self.log.events = self.pilot.events
        ends = [e["t"] for e in self.pilot.events]
        self.log.makespan = (max(ends) - self._t0) if ends else 0.0
        self.log.md_busy = self.pilot.md_busy
        self.log.peak_cores = self.pilot.peak_in_use
        self.log.truncated = self.pilot.truncated
        self.log.next_task_id = self.pilot.next_task_id
        return self.log


class SyncDriver(_Driver):
    pattern = "sync"

    def run(self, cycles: int, start_cycle: int = 0) -> RunLog:
        self.target = start_cycle + cycles
        self.cycle = start_cycle
        self.log.next_cycle = start_cycle
        if cycles > 0:
            self.start_cycle()
        else:
            self.save_checkpoint()
        log = self.finish()
        for r in self.grid.replicas:
            if r.status is not ReplicaStatus.FAILED and not log.truncated:
                r.status = ReplicaStatus.IDLE
        return log

    def save_checkpoint(self) -> None:
        """Snapshot at a cycle boundary: everything needed to resume, plus artifact counts."""
        replicas = []
        for r in self.grid.replicas:
            d = r.to_dict()
            if r.status is not ReplicaStatus.FAILED:
                d["status"] = ReplicaStatus.IDLE.value
            replicas.append(d)
        self.log.checkpoint = {
            "next_cycle": self.cycle,
            "time": self.pilot.now,
            "next_task_id": self.pilot.next_task_id,
            "replicas": replicas,
            "n_events": len(self.pilot.events),
            "n_exchanges": len(self.log.exchanges),
            "n_timings": len(self.log.timings),
            "n_samples": len(self.log.samples),
        }

    def start_cycle(self) -> None:
        self.save_checkpoint()
        if self.cycle >= self.target or not self.grid.active():
            return
        self.t_cycle = self.pilot.now
        self.wall_cycle = time.perf_counter()
        f = self.spec.durations.framework_overhead
        if f > 0:
            self.pilot.after(f, self.start_md)
        else:
            self.start_md()

    def start_md(self) -> None:
        self.t_md = self.pilot.now
        active = self.grid.active()
        self.pending = len(active)
        self.md_tasks = 0
        first_id = self.pilot.next_task_id
        for r in active:
            self.submit_md(r, self.md_done)
        self.first_md_id = first_id

    def md_done(self, outcome: Outcome) -> None:
        self.md_tasks = self.pilot.next_task_id - self.first_md_id
        self.absorb_md(outcome)
        self.pending -= 1
        if self.pending:
            return
        self.pilot.mark("barrier", phase="md", cycle=self.cycle)
        self.md_span = self.pilot.now - self.t_md
        self.log.md_waves.append(wave_count(self.md_tasks, self.pilot.concurrency))
        self.exchange_phase(self.grid.active(), self.cycle, self.exchange_done)

    def exchange_done(self, record: ExchangeRecord, stats: dict) -> None:
        for r in self.grid.active():
            r.advance_cycle()
            r.status = ReplicaStatus.IDLE
        d = self.spec.durations
        o = d.launch_overhead
        conc = self.pilot.concurrency
        md_launch = min(self.log.md_waves[-1] * o, self.md_span)
        e_span = stats["energy_span"]
        e_launch = min(wave_count(stats["energy_tasks"], conc) * o, e_span)
        x_work = stats.get("exchange_work", 0.0)
        timing = CycleTiming(
            t_md=self.md_span - md_launch,
            t_ex=(e_span - e_launch) + x_work,
            t_data=d.data_time,
            t_repex_over=d.framework_overhead,
            t_rp_over=md_launch + e_launch + o,
        )
        self.log.timings.append(TimingRow(self.cycle, record.dim, timing,
                                          time.perf_counter() - self.wall_cycle))
        self.pilot.mark("barrier", phase="exchange", cycle=self.cycle)
        self.cycle += 1
        self.log.next_cycle = self.cycle
        self.start_cycle()


class AsyncDriver(_Driver):
    pattern = "async"

    def run(self, cycles: int, criterion: Criterion) -> RunLog:
        self.criterion = criterion
        self.target = {r.replica_id: r.cycle + cycles for r in self.grid.replicas}
        self.waiting: list[ReplicaState] = []
        self.window_open = False
        self.index = 0
        self.md_work: dict[int, float] = {}
        self.wall_md: dict[int, float] = {}
        if cycles > 0:
            for r in self.grid.active():
                self.start_md(r)
        else:
            for r in self.grid.active():
                r.status = ReplicaStatus.DONE
        log = self.finish()
        log.next_cycle = self.index
        return log

    def start_md(self, r: ReplicaState) -> None:
        self.wall_md[r.replica_id] = time.perf_counter()
        self.submit_md(r, self.md_done)

    def md_done(self, outcome: Outcome) -> None:
        r = self.absorb_md(outcome)
        if r.status is ReplicaStatus.AWAITING_EXCHANGE:
            self.md_work[r.replica_id] = outcome.work
            self.waiting.append(r)
            self.pilot.mark("arrive", replica=r.replica_id, cycle=r.cycle)
            if isinstance(self.criterion, TimeWindow) and not self.window_open:
                self.window_open = True
                self.pilot.after(self.criterion.seconds, self.close_window)
        self.gate()

    def close_window(self) -> None:
        self.window_open = False
        if self.waiting:
            batch, self.waiting = self.waiting, []
            self.launch(batch)

    def gate(self) -> None:
        if isinstance(self.criterion, FifoN):
            n = self.criterion.n
            while len(self.waiting) >= n:
                batch, self.waiting = self.waiting[:n], self.waiting[n:]
                self.launch(batch)
            if self.waiting and not self.window_open and self._stalled():
                batch, self.waiting = self.waiting, []
                self.launch(batch)

    def _stalled(self) -> bool:
        # nobody left who could still arrive: flush the partial batch
        busy = (ReplicaStatus.RUNNING_MD, ReplicaStatus.IN_EXCHANGE)
        return not any(r.status in busy for r in self.grid.replicas)

    def launch(self, batch: list[ReplicaState]) -> None:
        index = self.index
        self.index += 1
        batch = sorted(batch, key=lambda r: r.replica_id)
        wall = min(self.wall_md[r.replica_id] for r in batch)

        def done(record: ExchangeRecord, stats: dict) -> None:
            d = self.spec.durations
            o = d.launch_overhead
            survivors = [r for r in batch if r.status is not ReplicaStatus.FAILED]
            t_md = (sum(self.md_work[r.replica_id] for r in batch) / len(batch))
            has_energy = stats["energy_tasks"] > 0
            timing = CycleTiming(
                t_md=t_md,
                t_ex=stats["energy_work"] + stats.get("exchange_work", 0.0),
                t_data=d.data_time,
                t_repex_over=d.framework_overhead,
                t_rp_over=o * (2 + has_energy),
            )
            self.log.timings.append(TimingRow(index, record.dim, timing, time.perf_counter() - wall))
            for r in survivors:
                r.advance_cycle()
                if r.cycle >= self.target[r.replica_id]:
                    r.status = ReplicaStatus.DONE
                else:
                    self.start_md(r)
            self.gate()

        self.exchange_phase(batch, index, done)


def run_sync(grid: ReplicaGrid, pilot: PilotSpec, cycles: int, system: PotentialSystem,
             segment: MDSegment, **kwargs) -> RunLog:
    start_cycle = kwargs.pop("start_cycle", 0)
    return SyncDriver(grid, system, pilot, segment, **kwargs).run(cycles, start_cycle)


def run_async(grid: ReplicaGrid, pilot: PilotSpec, cycles: int, criterion: Criterion,
              system: PotentialSystem, segment: MDSegment, **kwargs) -> RunLog:
    return AsyncDriver(grid, system, pilot, segment, **kwargs).run(cycles, criterion)
