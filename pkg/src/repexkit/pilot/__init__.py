"""Pilot-style resource manager and the RE pattern drivers."""
from .patterns import (
    AsyncDriver,
    FifoN,
    RunLog,
    Sample,
    SyncDriver,
    TimeWindow,
    TimingRow,
    run_async,
    run_sync,
)
from .resources import (
    Constant,
    Continue,
    DurationModel,
    ExecutionMode,
    FaultPolicy,
    LogNormal,
    PilotError,
    PilotSpec,
    RealWorkers,
    Relaunch,
    TaskKind,
    TaskSpec,
    Uniform,
    VirtualClock,
    execution_mode,
    max_concurrency,
)
from .scheduler import (
    Outcome,
    Pilot,
    ScheduleResult,
    core_usage_profile,
    inject_faults,
    simulate_schedule,
    task_attempts,
    wave_count,
)
