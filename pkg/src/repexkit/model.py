"""Shared domain types: parameter ladders, replicas and replica grids.

Units are fixed throughout the package: energies in kcal/mol, temperatures
in K, torsion angles in degrees.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

KB = 0.0019872041  # kcal / (mol K)

_MASK64 = (1 << 64) - 1


class ModelError(ValueError):
    """Invalid model configuration (bad ladder, empty grid, ...)."""


class DimensionKind(str, enum.Enum):
    TEMPERATURE = "temperature"
    UMBRELLA = "umbrella"
    HAMILTONIAN_SCALE = "hamiltonian_scale"

    @property
    def needs_energy_tasks(self) -> bool:
        # Umbrella cross energies are cheap and computed inline by the
        # exchange step; scaled Hamiltonians go through the engine.
        return self is DimensionKind.HAMILTONIAN_SCALE


class Progression(str, enum.Enum):
    GEOMETRIC = "geometric"
    UNIFORM = "uniform"


class ReplicaStatus(str, enum.Enum):
    IDLE = "idle"
    RUNNING_MD = "running_md"
    AWAITING_EXCHANGE = "awaiting_exchange"
    IN_EXCHANGE = "in_exchange"
    FAILED = "failed"
    DONE = "done"


def beta(temperature: float) -> float:
    return 1.0 / (KB * temperature)


def wrap_angle(x):
    """Wrap degrees into [0, 360). Works on scalars and arrays."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"cannot wrap non-finite angle {x!r}")
    out = np.mod(arr, 360.0)
    # np.mod(-1e-17, 360) rounds to 360.0
    out = np.where(out >= 360.0, 0.0, out)
    if np.ndim(x) == 0:
        return float(out)
    return out


def angle_diff(a, b):
    """Minimal-image difference a - b in [-180, 180)."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + 180.0, 360.0) - 180.0
    d = np.where(d >= 180.0, d - 360.0, d)
    if np.ndim(d) == 0:
        return float(d)
    return d


def mix_seed(*keys: int) -> int:
    """Fold integers into one 64-bit seed with the splitmix64 finalizer."""
    h = 0x9E3779B97F4A7C15
    for k in keys:
        h = (h ^ (int(k) & _MASK64)) & _MASK64
        h = (h + 0x9E3779B97F4A7C15) & _MASK64
        z = h
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        h = z ^ (z >> 31)
    return h


def build_ladder(kind, lo: float, hi: float, n: int,
                 progression: Progression | str | None = None) -> list[float]:
    """Return ``n`` ladder values between ``lo`` and ``hi``.

    Without a ``progression``, temperature ladders are geometric and the
    other kinds uniform.

    Geometric ladders keep a constant ratio between neighbours and hit both
    endpoints exactly. Uniform umbrella ladders are periodic: ``n`` centres
    spaced ``(hi - lo) / n`` apart starting at ``lo``, so 0 and 360 are not
    both present. Any other uniform ladder includes both endpoints.
    """
    kind = DimensionKind(kind)
    if progression is None:
        progression = Progression.GEOMETRIC if kind is DimensionKind.TEMPERATURE else Progression.UNIFORM
    progression = Progression(progression)
    if n < 1:
        raise ModelError(f"invalid-count: ladder needs at least one window, got {n}")
    if lo > hi:
        raise ModelError(f"invalid-range: lo={lo} > hi={hi}")
    if progression is Progression.GEOMETRIC:
        if lo <= 0:
            raise ModelError(f"invalid-range: geometric ladder needs lo > 0, got {lo}")
        if n == 1:
            return [float(lo)]
        values = [lo * (hi / lo) ** (i / (n - 1)) for i in range(n)]
        values[0], values[-1] = float(lo), float(hi)
        return values
    if kind is DimensionKind.UMBRELLA:
        step = (hi - lo) / n
        return [lo + i * step for i in range(n)]
    if n == 1:
        return [float(lo)]
    step = (hi - lo) / (n - 1)
    values = [lo + i * step for i in range(n)]
    values[-1] = float(hi)
    return values


@dataclass(frozen=True)
class ParameterPoint:
    value: float
    index: int


@dataclass(frozen=True)
class DimensionSpec:
    """One exchange dimension and its parameter ladder.

    ``force_constant`` and ``coordinate`` only matter for umbrella
    dimensions, ``term`` only for Hamiltonian scaling.
    """

    kind: DimensionKind
    ladder: tuple[ParameterPoint, ...]
    force_constant: float = 0.0
    coordinate: int = 0
    term: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "kind", DimensionKind(self.kind))
        if len(self.ladder) < 1:
            raise ModelError("ladder length must be >= 1")
        indices = [p.index for p in self.ladder]
        if indices != list(range(len(indices))):
            raise ModelError(f"ladder indices must be 0..n-1 in order, got {indices}")
        values = self.values
        if not all(math.isfinite(v) for v in values):
            raise ModelError("ladder values must be finite")
        increasing = all(b > a for a, b in zip(values, values[1:]))
        decreasing = all(b < a for a, b in zip(values, values[1:]))
        if len(values) > 1 and not (increasing or decreasing):
            raise ModelError(f"ladder must be strictly monotone, got {values}")
        if self.kind is DimensionKind.TEMPERATURE and min(values) <= 0:
            raise ModelError(f"temperatures must be > 0 K, got {values}")
        if self.kind is DimensionKind.UMBRELLA:
            if not self.force_constant >= 0:
                raise ModelError(f"umbrella force constant must be >= 0, got {self.force_constant}")
            if self.coordinate < 0:
                raise ModelError(f"restrained coordinate index must be >= 0, got {self.coordinate}")
        if self.kind is DimensionKind.HAMILTONIAN_SCALE and not all(0.0 <= v <= 1.0 for v in values):
            raise ModelError(f"hamiltonian scale values must lie in [0, 1], got {values}")

    @classmethod
    def from_values(cls, kind, values: Sequence[float], **kwargs) -> "DimensionSpec":
        ladder = tuple(ParameterPoint(float(v), i) for i, v in enumerate(values))
        return cls(DimensionKind(kind), ladder, **kwargs)

    @property
    def values(self) -> list[float]:
        return [p.value for p in self.ladder]

    def __len__(self) -> int:
        return len(self.ladder)


@dataclass
class ReplicaState:
    """Mutable state of one replica.

    ``coords`` holds one ladder index per dimension; ``positions`` are
    dimensionless for the 1D system and degrees for the torsion system.
    """

    replica_id: int
    coords: tuple[int, ...]
    positions: np.ndarray
    velocities: np.ndarray
    seed: int
    cycle: int = 0
    status: ReplicaStatus = ReplicaStatus.IDLE

    def advance_cycle(self) -> None:
        self.cycle += 1

    def to_dict(self) -> dict:
        return {
            "replica_id": self.replica_id,
            "coords": list(self.coords),
            "positions": [float(x) for x in self.positions],
            "velocities": [float(v) for v in self.velocities],
            "seed": self.seed,
            "cycle": self.cycle,
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReplicaState":
        return cls(
            replica_id=int(d["replica_id"]),
            coords=tuple(int(c) for c in d["coords"]),
            positions=np.array(d["positions"], dtype=float),
            velocities=np.array(d["velocities"], dtype=float),
            seed=int(d["seed"]),
            cycle=int(d["cycle"]),
            status=ReplicaStatus(d["status"]),
        )


@dataclass
class ReplicaGrid:
    dimensions: tuple[DimensionSpec, ...]
    replicas: list[ReplicaState]
    base_temperature: float = 300.0
    _by_id: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        expected = math.prod(len(d) for d in self.dimensions)
        if len(self.replicas) != expected:
            raise ModelError(f"grid needs {expected} replicas, got {len(self.replicas)}")
        self._by_id = {r.replica_id: r for r in self.replicas}

    def __len__(self) -> int:
        return len(self.replicas)

    def __getitem__(self, replica_id: int) -> ReplicaState:
        return self._by_id[replica_id]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(d) for d in self.dimensions)

    def active(self) -> list[ReplicaState]:
        """Replicas that have not failed, in id order."""
        return [r for r in self.replicas if r.status is not ReplicaStatus.FAILED]

    def parameter_values(self, coords: Sequence[int]) -> tuple[float, ...]:
        return tuple(d.ladder[c].value for d, c in zip(self.dimensions, coords))


def build_grid(dimensions: Sequence[DimensionSpec], positions: np.ndarray | Sequence[float],
               seed: int = 0, base_temperature: float = 300.0,
               velocities: np.ndarray | None = None) -> ReplicaGrid:
    """One replica per cell of the Cartesian product of the ladders.

    Replica ids follow row-major order of the ladder indices; every replica
    starts from ``positions`` and gets a seed derived from ``seed`` and its id.
    """
    dimensions = tuple(dimensions)
    if not dimensions:
        raise ModelError("invalid-config: at least one exchange dimension is required")
    x0 = np.asarray(positions, dtype=float)
    v0 = np.zeros_like(x0) if velocities is None else np.asarray(velocities, dtype=float)
    replicas = []
    cells = itertools.product(*(range(len(d)) for d in dimensions))
    for rid, coords in enumerate(cells):
        replicas.append(ReplicaState(
            replica_id=rid,
            coords=tuple(coords),
            positions=x0.copy(),
            velocities=v0.copy(),
            seed=mix_seed(seed, rid),
        ))
    return ReplicaGrid(dimensions, replicas, base_temperature=base_temperature)
