"""Pilot, task, duration and fault descriptions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

DURATION_STREAM = 0x44555241  # "DURA"
FAULT_STREAM = 0x46415554  # "FAUT"


class PilotError(ValueError):
    pass


class TaskKind(str, enum.Enum):
    MD = "md"
    ENERGY_EVAL = "energy_eval"
    EXCHANGE = "exchange"


class ExecutionMode(str, enum.Enum):
    MODE_I = "I"
    MODE_II = "II"


@dataclass(frozen=True)
class Constant:
    t: float

    def __post_init__(self):
        if not self.t > 0:
            raise PilotError(f"durations must be > 0, got {self.t}")

    def sample(self, rng: np.random.Generator) -> float:
        return self.t

    @property
    def mean(self) -> float:
        return self.t


@dataclass(frozen=True)
class LogNormal:
    """exp(N(mu, sigma^2)) seconds."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.sigma >= 0):
            raise PilotError(f"bad log-normal parameters mu={self.mu}, sigma={self.sigma}")

    @classmethod
    def from_mean(cls, mean: float, sigma: float) -> "LogNormal":
        return cls(math.log(mean) - 0.5 * sigma * sigma, sigma)

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.lognormal(self.mu, self.sigma))

    @property
    def mean(self) -> float:
        return math.exp(self.mu + 0.5 * self.sigma ** 2)


@dataclass(frozen=True)
class Uniform:
    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a <= self.b):
            raise PilotError(f"uniform durations need 0 < a <= b, got ({self.a}, {self.b})")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.a, self.b))

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)


Distribution = Union[Constant, LogNormal, Uniform]


@dataclass(frozen=True)
class DurationModel:
    """Logical task durations, plus the fixed per-task and per-phase costs.

    Each task holds its cores for ``launch_overhead + work``.
    ``framework_overhead`` is a preparation delay before each MD phase and
    ``data_time`` a staging delay before each exchange computation.
    """

    md: Distribution = Constant(10.0)
    energy_eval: Distribution = Constant(1.0)
    exchange: Distribution = Constant(0.5)
    launch_overhead: float = 0.0
    framework_overhead: float = 0.0
    data_time: float = 0.0

    def __post_init__(self):
        for name in ("launch_overhead", "framework_overhead", "data_time"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise PilotError(f"{name} must be >= 0, got {value}")

    def sample(self, kind: TaskKind, seed: int, task_id: int, replica_id: int | None = None) -> float:
        """Duration of one task. ``replica_id`` is unused here; subclasses may
        use it to model replicas with systematically different speeds."""
        dist = {TaskKind.MD: self.md, TaskKind.ENERGY_EVAL: self.energy_eval,
                TaskKind.EXCHANGE: self.exchange}[TaskKind(kind)]
        rng = np.random.default_rng(np.random.SeedSequence([seed, DURATION_STREAM, task_id]))
        return dist.sample(rng)


@dataclass(frozen=True)
class VirtualClock:
    """Durations only; task payloads are not executed."""


@dataclass(frozen=True)
class RealWorkers:
    """Payloads run on a thread pool; the scheduling clock stays logical."""

    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise PilotError(f"need at least one worker, got {self.workers}")


@dataclass(frozen=True)
class PilotSpec:
    total_cores: int
    cores_per_replica: int = 1
    walltime: float | None = None
    backend: Union[VirtualClock, RealWorkers] = field(default_factory=VirtualClock)
    durations: DurationModel = field(default_factory=DurationModel)

    def __post_init__(self):
        if not (self.total_cores >= self.cores_per_replica >= 1):
            raise PilotError(
                f"need total cores >= cores per replica >= 1, got {self.total_cores}, {self.cores_per_replica}")
        if self.walltime is not None and not self.walltime > 0:
            raise PilotError(f"walltime must be > 0, got {self.walltime}")


@dataclass(frozen=True)
class Continue:
    """Failed replicas are dropped; the run goes on without them."""


@dataclass(frozen=True)
class Relaunch:
    max_retries: int = 3

    def __post_init__(self):
        if self.max_retries < 0:
            raise PilotError(f"max retries must be >= 0, got {self.max_retries}")


@dataclass(frozen=True)
class FaultPolicy:
    p: float = 0.0
    recovery: Union[Continue, Relaunch] = field(default_factory=Continue)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise PilotError(f"failure probability must be in [0, 1], got {self.p}")

    @property
    def max_attempts(self) -> int:
        return 1 + self.recovery.max_retries if isinstance(self.recovery, Relaunch) else 1

    def fails(self, seed: int, task_id: int) -> bool:
        if self.p <= 0.0:
            return False
        if self.p >= 1.0:
            return True
        rng = np.random.default_rng(np.random.SeedSequence([seed, FAULT_STREAM, task_id]))
        return bool(rng.random() < self.p)


@dataclass
class TaskSpec:
    task_id: int
    replica_id: int
    kind: TaskKind
    cores: int = 1
    payload: Any = None
    attempt: int = 0
    cycle: int = 0

    def __post_init__(self):
        self.kind = TaskKind(self.kind)
        if self.cores < 1:
            raise PilotError(f"tasks need at least one core, got {self.cores}")


def max_concurrency(pilot: PilotSpec) -> int:
    return pilot.total_cores // pilot.cores_per_replica


def execution_mode(pilot: PilotSpec, grid) -> ExecutionMode:
    """Mode I when every replica can run at once, Mode II otherwise."""
    n = grid if isinstance(grid, int) else len(grid)
    if n < 1:
        raise PilotError("grid is empty")
    return ExecutionMode.MODE_I if max_concurrency(pilot) >= n else ExecutionMode.MODE_II
