"""JSON run configuration: schema, defaults, validation and object construction."""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from . import engine
from .model import DimensionKind, DimensionSpec, ModelError, ReplicaGrid, build_grid, build_ladder
from .pilot import resources as res
from .pilot.patterns import Criterion, FifoN, TimeWindow


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending key (e.g. ``dimensions[0].ladder``)."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


# -- system -----------------------------------------------------------------


class DoubleWellConfig(_Model):
    type: Literal["DoubleWell1D"] = "DoubleWell1D"
    a: float = 1.0
    b: float = 2.0
    mass: float = 1.0
    initial: Optional[list[float]] = None

    @field_validator("a")
    @classmethod
    def _bounded(cls, v):
        if not v > 0:
            raise ValueError("a must be > 0 so the potential is bounded below")
        return v


class TorsionConfig(_Model):
    type: Literal["Torsion2D"] = "Torsion2D"
    A: float = 3.0
    B: float = 3.0
    C: float = 1.5
    mass: float = (math.pi / 180.0) ** 2
    initial: Optional[list[float]] = None


SystemConfig = Annotated[Union[DoubleWellConfig, TorsionConfig], Field(discriminator="type")]


# -- dimensions -------------------------------------------------------------


def _check_ladder(kind, v) -> None:
    if not v:
        raise ValueError("ladder must have at least one value")
    if not all(math.isfinite(x) for x in v):
        raise ValueError("ladder values must be finite")
    if kind is DimensionKind.TEMPERATURE and min(v) <= 0:
        raise ValueError(f"temperatures must be > 0 K, got {v}")
    if kind is DimensionKind.HAMILTONIAN_SCALE and not all(0 <= x <= 1 for x in v):
        raise ValueError(f"hamiltonian scale values must be in [0, 1], got {v}")
    if len(v) > 1 and not (all(b > a for a, b in zip(v, v[1:])) or all(b < a for a, b in zip(v, v[1:]))):
        raise ValueError(f"ladder must be strictly monotone, got {v}")


class DimensionConfig(_Model):
    kind: DimensionKind
    ladder: Optional[list[float]] = None
    lo: Optional[float] = None
    hi: Optional[float] = None
    n: Optional[int] = None
    progression: Optional[Literal["geometric", "uniform"]] = None
    force_constant: float = 0.02
    coordinate: int = 0
    term: str = "all"

    @field_validator("ladder")
    @classmethod
    def _ladder_values(cls, v, info: ValidationInfo):
        if v is not None:
            _check_ladder(info.data.get("kind"), v)
        return v

    @field_validator("lo", "hi")
    @classmethod
    def _bounds(cls, v, info: ValidationInfo):
        if v is not None and info.data.get("kind") is DimensionKind.TEMPERATURE and v <= 0:
            raise ValueError(f"temperatures must be > 0 K, got {v}")
        return v

    @field_validator("force_constant")
    @classmethod
    def _k(cls, v):
        if not v >= 0:
            raise ValueError("force constant must be >= 0")
        return v

    @model_validator(mode="after")
    def _fill_ladder(self):
        if self.progression is None:
            self.progression = "geometric" if self.kind is DimensionKind.TEMPERATURE else "uniform"
        if self.ladder is None:
            if None in (self.lo, self.hi, self.n):
                raise ValueError("give either 'ladder' or all of 'lo', 'hi', 'n'")
            try:
                self.ladder = build_ladder(self.kind, self.lo, self.hi, self.n, self.progression)
            except ModelError as exc:
                raise ValueError(str(exc)) from None
            _check_ladder(self.kind, self.ladder)
        return self

    def to_spec(self) -> DimensionSpec:
        return DimensionSpec.from_values(self.kind, self.ladder, force_constant=self.force_constant,
                                         coordinate=self.coordinate, term=self.term)


# -- pattern ----------------------------------------------------------------


class FifoConfig(_Model):
    type: Literal["fifo"] = "fifo"
    n: int = Field(ge=1)


class WindowConfig(_Model):
    type: Literal["window"] = "window"
    seconds: float = Field(ge=0)


class SyncConfig(_Model):
    type: Literal["sync"] = "sync"


class AsyncConfig(_Model):
    type: Literal["async"] = "async"
    criterion: Annotated[Union[FifoConfig, WindowConfig], Field(discriminator="type")]


# -- pilot ------------------------------------------------------------------


class ConstantConfig(_Model):
    type: Literal["constant"] = "constant"
    t: float = Field(gt=0)


class LogNormalConfig(_Model):
    type: Literal["lognormal"] = "lognormal"
    sigma: float = Field(ge=0)
    mu: Optional[float] = None
    mean: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _resolve_mu(self):
        if (self.mu is None) == (self.mean is None):
            raise ValueError("give exactly one of 'mu' or 'mean'")
        if self.mean is not None:
            self.mu = math.log(self.mean) - 0.5 * self.sigma ** 2
            self.mean = None
        return self


class UniformConfig(_Model):
    type: Literal["uniform"] = "uniform"
    a: float = Field(gt=0)
    b: float = Field(gt=0)


DistributionConfig = Annotated[Union[ConstantConfig, LogNormalConfig, UniformConfig], Field(discriminator="type")]


def _dist(cfg) -> res.Distribution:
    if cfg.type == "constant":
        return res.Constant(cfg.t)
    if cfg.type == "lognormal":
        return res.LogNormal(cfg.mu, cfg.sigma)
    return res.Uniform(cfg.a, cfg.b)


class DurationsConfig(_Model):
    md: DistributionConfig = ConstantConfig(t=10.0)
    energy_eval: DistributionConfig = ConstantConfig(t=1.0)
    exchange: DistributionConfig = ConstantConfig(t=0.5)
    launch_overhead: float = Field(default=0.0, ge=0)
    framework_overhead: float = Field(default=0.0, ge=0)
    data_time: float = Field(default=0.0, ge=0)


class VirtualBackendConfig(_Model):
    type: Literal["virtual"] = "virtual"


class RealBackendConfig(_Model):
    type: Literal["real"] = "real"
    workers: int = Field(default=1, ge=1)


class PilotConfig(_Model):
    cores: Optional[int] = Field(default=None, ge=1)
    cores_per_replica: int = Field(default=1, ge=1)
    walltime: Optional[float] = Field(default=None, gt=0)
    backend: Annotated[Union[RealBackendConfig, VirtualBackendConfig], Field(discriminator="type")] = \
        RealBackendConfig()
    durations: DurationsConfig = DurationsConfig()


class ContinueConfig(_Model):
    type: Literal["continue"] = "continue"


class RelaunchConfig(_Model):
    type: Literal["relaunch"] = "relaunch"
    max_retries: int = Field(default=3, ge=0)


class FaultsConfig(_Model):
    p: float = Field(default=0.0, ge=0, le=1)
    recovery: Annotated[Union[ContinueConfig, RelaunchConfig], Field(discriminator="type")] = ContinueConfig()


# -- top level --------------------------------------------------------------


class SimulationConfig(_Model):
    system: SystemConfig
    dimensions: list[DimensionConfig] = Field(min_length=1)
    cycles: int = Field(ge=0)
    temperature: float = Field(default=300.0, gt=0)
    steps_per_cycle: int = Field(default=1000, ge=0)
    step_size: float = Field(default=0.01, gt=0)
    friction: float = Field(default=1.0, ge=0)
    stride: int = Field(default=100, ge=1)
    pattern: Annotated[Union[SyncConfig, AsyncConfig], Field(discriminator="type")] = SyncConfig()
    pilot: PilotConfig = PilotConfig()
    faults: FaultsConfig = FaultsConfig()
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    output: str = "repex_run"
    keep_samples: bool = True

    @model_validator(mode="after")
    def _check(self):
        ndim = 1 if self.system.type == "DoubleWell1D" else 2
        scale_dims = 0
        for k, d in enumerate(self.dimensions):
            if d.kind is DimensionKind.UMBRELLA and not 0 <= d.coordinate < ndim:
                raise _PathError(f"dimensions[{k}].coordinate",
                                 f"restrained coordinate must be in [0, {ndim}), got {d.coordinate}")
            if d.kind is DimensionKind.UMBRELLA:
                # the restraint alone is a harmonic oscillator; the integrator diverges past omega*dt = 2
                omega = math.sqrt(d.force_constant / self.system.mass)
                if omega * self.step_size >= 2.0:
                    raise _PathError("step_size", f"{self.step_size} is unstable with the restraint of "
                                     f"dimensions[{k}]; use < {2.0 / omega:.3g}")
            if d.kind is DimensionKind.HAMILTONIAN_SCALE:
                scale_dims += 1
                terms = engine.DoubleWell1D.terms if ndim == 1 else engine.Torsion2D.terms
                if d.term != "all" and d.term not in terms:
                    raise _PathError(f"dimensions[{k}].term", f"unknown term {d.term!r}; use 'all' or one of {terms}")
        if scale_dims > 1:
            raise _PathError("dimensions", "at most one hamiltonian_scale dimension is supported")
        if self.system.initial is not None and len(self.system.initial) != ndim:
            raise _PathError("system.initial", f"expected {ndim} coordinates")
        if self.pilot.cores is None:
            self.pilot.cores = self.replica_count * self.pilot.cores_per_replica
        if self.pilot.cores < self.pilot.cores_per_replica:
            raise _PathError("pilot.cores", "fewer cores than one replica needs")
        return self

    @property
    def replica_count(self) -> int:
        return math.prod(len(d.ladder) for d in self.dimensions)

    # -- object construction ------------------------------------------------

    def build_system(self) -> engine.PotentialSystem:
        s = self.system
        if s.type == "DoubleWell1D":
            return engine.DoubleWell1D(s.a, s.b, s.mass)
        return engine.Torsion2D(s.A, s.B, s.C, s.mass)

    def build_grid(self) -> ReplicaGrid:
        system = self.build_system()
        initial = self.system.initial if self.system.initial is not None else system.minimum()
        return build_grid([d.to_spec() for d in self.dimensions], initial, seed=self.seed,
                          base_temperature=self.temperature)

    def build_segment(self) -> engine.MDSegment:
        return engine.MDSegment(self.steps_per_cycle, self.step_size, self.friction, self.stride)

    def build_pilot(self) -> res.PilotSpec:
        p = self.pilot
        backend = res.RealWorkers(p.backend.workers) if p.backend.type == "real" else res.VirtualClock()
        d = p.durations
        durations = res.DurationModel(_dist(d.md), _dist(d.energy_eval), _dist(d.exchange),
                                      d.launch_overhead, d.framework_overhead, d.data_time)
        return res.PilotSpec(p.cores, p.cores_per_replica, p.walltime, backend, durations)

    def build_faults(self) -> res.FaultPolicy:
        f = self.faults
        recovery = res.Relaunch(f.recovery.max_retries) if f.recovery.type == "relaunch" else res.Continue()
        return res.FaultPolicy(f.p, recovery)

    def build_criterion(self) -> Criterion | None:
        if self.pattern.type == "sync":
            return None
        c = self.pattern.criterion
        return FifoN(c.n) if c.type == "fifo" else TimeWindow(c.seconds)

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


class _PathError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(message)


_UNION_TAGS = {"DoubleWell1D", "Torsion2D", "sync", "async", "fifo", "window", "constant", "lognormal",
               "uniform", "virtual", "real", "continue", "relaunch"}


def _format_loc(loc) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        elif part in _UNION_TAGS:
            continue
        else:
            out += f".{part}" if out else str(part)
    return out


def config_from_dict(data: dict) -> SimulationConfig:
    try:
        return SimulationConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        ctx_error = (err.get("ctx") or {}).get("error")
        if isinstance(ctx_error, _PathError):
            raise ConfigError(ctx_error.path, str(ctx_error)) from None
        path = _format_loc(err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        if err["type"] == "missing":
            msg = "missing required key"
        raise ConfigError(path, msg) from None


def parse_config(path) -> SimulationConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("", "top level of the config must be a JSON object")
    return config_from_dict(data)


def dump_config(config: SimulationConfig, path) -> None:
    Path(path).write_text(json.dumps(config.resolved(), indent=2) + "\n", encoding="utf-8")
