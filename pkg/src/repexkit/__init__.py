"""repexkit: multi-dimensional replica exchange on a pilot-style task scheduler."""
from .analysis import acceptance_stats, free_energy_histogram, round_trips, wham_surface
from .config import ConfigError, SimulationConfig, config_from_dict, parse_config
from .engine import (
    DoubleWell1D,
    EngineRequest,
    EngineResult,
    LangevinEngine,
    MDSegment,
    ThermoParams,
    Torsion2D,
    run_md_segment,
    single_point_energy,
    total_energy,
)
from .exchange import ExchangeRecord, acceptance_delta, active_dimension, attempt_exchanges
from .metrics import CycleTiming, cycle_time, strong_efficiency, utilization, weak_efficiency
from .model import (
    KB,
    DimensionKind,
    DimensionSpec,
    ReplicaGrid,
    ReplicaState,
    ReplicaStatus,
    build_grid,
    build_ladder,
)
from .pilot import (
    Constant,
    Continue,
    DurationModel,
    FaultPolicy,
    FifoN,
    LogNormal,
    PilotSpec,
    RealWorkers,
    Relaunch,
    TimeWindow,
    VirtualClock,
    run_async,
    run_sync,
    simulate_schedule,
)

__version__ = "0.1.0"
