"""Built-in MD engine: Langevin dynamics (BAOAB) on analytic potentials.

The engine is stateless. Everything a segment needs travels in an
:class:`EngineRequest`, and the noise stream is derived from the replica
seed and cycle, so a segment can run on any worker and give the same bits.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Protocol, Union

import numba
import numpy as np

from .model import KB, DimensionKind, ModelError, ReplicaGrid, angle_diff, wrap_angle


class EngineError(RuntimeError):
    """Recoverable engine failure; the pilot maps it to a failed task."""


class ConfigurationError(ValueError):
    pass


_DOUBLE_WELL = 0
_TORSION = 1

# Steps per block of pre-drawn noise; bounds memory for long segments.
_NOISE_BLOCK = 200_000


@dataclass(frozen=True)
class DoubleWell1D:
    """U(x) = a x^4 - b x^2, minima at x = +/- sqrt(b / 2a)."""

    a: float = 1.0
    b: float = 2.0
    mass: float = 1.0

    kind_id = _DOUBLE_WELL
    ndim = 1
    periodic = (False,)
    terms = ("quartic", "quadratic")

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ConfigurationError("double-well parameters must be finite")
        if self.a <= 0:
            raise ConfigurationError(f"double well needs a > 0 to be bounded below, got a={self.a}")
        if not self.mass > 0:
            raise ConfigurationError(f"mass must be > 0, got {self.mass}")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.a, self.b, 0.0])

    def minimum(self) -> np.ndarray:
        return np.array([math.sqrt(self.b / (2 * self.a))]) if self.b > 0 else np.zeros(1)


@dataclass(frozen=True)
class Torsion2D:
    """U(phi, psi) = A(1 - cos phi) + B(1 - cos psi) + C cos(phi + psi), angles in degrees.

    The default mass makes the dynamics unit-mass in radians.
    """

    A: float = 3.0
    B: float = 3.0
    C: float = 1.5
    mass: float = (math.pi / 180.0) ** 2

    kind_id = _TORSION
    ndim = 2
    periodic = (True, True)
    terms = ("phi", "psi", "coupling")

    def __post_init__(self):
        if not all(math.isfinite(p) for p in (self.A, self.B, self.C)):
            raise ConfigurationError("torsion parameters must be finite")
        if not self.mass > 0:
            raise ConfigurationError(f"mass must be > 0, got {self.mass}")

    @property
    def params(self) -> np.ndarray:
        return np.array([self.A, self.B, self.C])

    def minimum(self) -> np.ndarray:
        return np.zeros(2)


PotentialSystem = Union[DoubleWell1D, Torsion2D]


@dataclass(frozen=True)
class Restraint:
    """Harmonic restraint 0.5 k d^2 on one coordinate (k per unit^2)."""

    center: float
    k: float
    coordinate: int = 0


@dataclass(frozen=True)
class ThermoParams:
    """The parameters a replica currently runs under."""

    temperature: float
    restraints: tuple[Restraint, ...] = ()
    lam: float = 1.0
    term: str = "all"


@dataclass(frozen=True)
class MDSegment:
    n_steps: int
    step_size: float
    friction: float = 1.0
    stride: int = 100

    def __post_init__(self):
        if self.n_steps < 0:
            raise ConfigurationError(f"n_steps must be >= 0, got {self.n_steps}")
        if not self.step_size > 0:
            raise ConfigurationError(f"step size must be > 0, got {self.step_size}")
        if self.friction < 0:
            raise ConfigurationError(f"friction must be >= 0, got {self.friction}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")


@dataclass(frozen=True)
class SinglePointEnergy:
    foreign: ThermoParams


@dataclass(frozen=True)
class EngineRequest:
    positions: np.ndarray
    velocities: np.ndarray
    seed: int
    params: ThermoParams
    kind: Union[MDSegment, SinglePointEnergy]
    cycle: int = 0


@dataclass
class EngineResult:
    positions: np.ndarray
    velocities: np.ndarray
    energy: float
    trajectory: np.ndarray
    duration: float = 0.0
    steps: int = 0
    extra: dict = field(default_factory=dict)


def params_for(grid: ReplicaGrid, coords) -> ThermoParams:
    """Thermodynamic parameters of the grid cell at ``coords``."""
    temperature = grid.base_temperature
    restraints = []
    lam, term = 1.0, "all"
    seen_scale = False
    for dim, c in zip(grid.dimensions, coords):
        value = dim.ladder[c].value
        if dim.kind is DimensionKind.TEMPERATURE:
            temperature = value
        elif dim.kind is DimensionKind.UMBRELLA:
            restraints.append(Restraint(value, dim.force_constant, dim.coordinate))
        else:
            if seen_scale:
                raise ModelError("at most one hamiltonian_scale dimension is supported")
            seen_scale = True
            lam, term = value, dim.term
    return ThermoParams(temperature, tuple(restraints), lam, term)


class Engine(Protocol):
    system: PotentialSystem

    def run_md_segment(self, request: EngineRequest) -> EngineResult: ...

    def single_point_energy(self, positions: np.ndarray, foreign: ThermoParams) -> float: ...


# --------------------------------------------------------------------------
# numba kernels


@numba.njit(cache=True, nogil=True)
def _energy_grad(kind, pp, scales, periodic, rc, rk, ri, x, grad):
    grad[:] = 0.0
    if kind == _DOUBLE_WELL:
        xx = x[0]
        u = scales[0] * pp[0] * xx ** 4 - scales[1] * pp[1] * xx * xx
        grad[0] = 4.0 * scales[0] * pp[0] * xx ** 3 - 2.0 * scales[1] * pp[1] * xx
    else:
        r = math.pi / 180.0
        phi = x[0] * r
        psi = x[1] * r
        s = math.sin(phi + psi)
        u = (scales[0] * pp[0] * (1.0 - math.cos(phi))
             + scales[1] * pp[1] * (1.0 - math.cos(psi))
             + scales[2] * pp[2] * math.cos(phi + psi))
        grad[0] = r * (scales[0] * pp[0] * math.sin(phi) - scales[2] * pp[2] * s)
        grad[1] = r * (scales[1] * pp[1] * math.sin(psi) - scales[2] * pp[2] * s)
    for m in range(rc.shape[0]):
        i = ri[m]
        d = x[i] - rc[m]
        if periodic[i]:
            d = (d + 180.0) % 360.0 - 180.0
        u += 0.5 * rk[m] * d * d
        grad[i] += rk[m] * d
    return u


@numba.njit(cache=True, nogil=True)
def _baoab(kind, pp, scales, periodic, rc, rk, ri, x, v, mass, dt, gamma, kT,
           noise, stochastic, n, offset, stride, traj):
    """Advance (x, v) in place by n BAOAB steps; returns (status, energy)."""
    d = x.shape[0]
    grad = np.empty(d)
    u = _energy_grad(kind, pp, scales, periodic, rc, rk, ri, x, grad)
    c1 = math.exp(-gamma * dt)
    c2 = math.sqrt(max(0.0, 1.0 - c1 * c1)) * math.sqrt(kT / mass)
    h = 0.5 * dt
    for step in range(n):
        for k in range(d):
            v[k] -= h * grad[k] / mass
            x[k] += h * v[k]
        if stochastic:
            for k in range(d):
                v[k] = c1 * v[k] + c2 * noise[step, k]
        else:
            for k in range(d):
                v[k] = c1 * v[k]
        for k in range(d):
            x[k] += h * v[k]
            if periodic[k]:
                x[k] = x[k] % 360.0
                if x[k] >= 360.0:
                    x[k] = 0.0
        u = _energy_grad(kind, pp, scales, periodic, rc, rk, ri, x, grad)
        for k in range(d):
            if not math.isfinite(grad[k]):
                return -1, u
            v[k] -= h * grad[k] / mass
        g = offset + step + 1
        if g % stride == 0:
            traj[g // stride, :] = x
    return 0, u


# --------------------------------------------------------------------------
# python-level helpers


def _term_scales(system: PotentialSystem, params: ThermoParams) -> np.ndarray:
    scales = np.ones(3)
    if params.term == "all":
        scales[: len(system.terms)] = params.lam
    else:
        try:
            scales[system.terms.index(params.term)] = params.lam
        except ValueError:
            raise ConfigurationError(
                f"unknown energy term {params.term!r} for {type(system).__name__}; "
                f"expected 'all' or one of {system.terms}") from None
    return scales


def _restraint_arrays(system: PotentialSystem, params: ThermoParams):
    rc = np.array([r.center for r in params.restraints], dtype=float)
    rk = np.array([r.k for r in params.restraints], dtype=float)
    ri = np.array([r.coordinate for r in params.restraints], dtype=np.int64)
    if ri.size and (ri.min() < 0 or ri.max() >= system.ndim):
        raise ConfigurationError(
            f"restraint coordinate out of range for {system.ndim}-dimensional system")
    return rc, rk, ri


def _check_config(system: PotentialSystem, x) -> np.ndarray:
    x = np.array(x, dtype=float).reshape(-1)
    if x.shape[0] != system.ndim:
        raise ConfigurationError(
            f"invalid-config: {type(system).__name__} expects {system.ndim} coordinates, got {x.shape[0]}")
    return x


def _kernel_args(system, params):
    rc, rk, ri = _restraint_arrays(system, params)
    periodic = np.array(system.periodic, dtype=np.bool_)
    return system.kind_id, system.params, _term_scales(system, params), periodic, rc, rk, ri


def energy_and_gradient(system: PotentialSystem, positions, params: ThermoParams):
    x = _check_config(system, positions)
    args = _kernel_args(system, params)
    grad = np.empty(system.ndim)
    u = _energy_grad(*args, x, grad)
    return float(u), grad


def total_energy(system: PotentialSystem, positions, params: ThermoParams) -> float:
    """Potential energy including restraints; the scaled term(s) carry lambda."""
    return energy_and_gradient(system, positions, params)[0]


def forces(system: PotentialSystem, positions, params: ThermoParams) -> np.ndarray:
    return -energy_and_gradient(system, positions, params)[1]


def restraint_energy(system: PotentialSystem, positions, restraints):
    """Restraint energy alone, evaluated in plain numpy (used by the exchange step).

    ``positions`` may also be an (m, ndim) stack, giving one energy per row.
    """
    x = np.asarray(positions, dtype=float)
    u = 0.0
    for r in restraints:
        if system.periodic[r.coordinate]:
            d = angle_diff(x[..., r.coordinate], r.center)
        else:
            d = x[..., r.coordinate] - r.center
        u = u + 0.5 * r.k * d * d
    return float(u) if np.ndim(u) == 0 else u


def segment_rng(seed: int, cycle: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, cycle]))


def run_md_segment(system: PotentialSystem, request: EngineRequest) -> EngineResult:
    kind = request.kind
    if not isinstance(kind, MDSegment):
        raise ConfigurationError("run_md_segment needs an MDSegment request")
    if request.params.temperature < 0:
        raise ConfigurationError("temperature must be >= 0")
    t0 = time.perf_counter()
    x = _check_config(system, request.positions)
    v = _check_config(system, request.velocities)
    for k, per in enumerate(system.periodic):
        if per:
            x[k] = wrap_angle(x[k])
    args = _kernel_args(system, request.params)
    n = kind.n_steps
    traj = np.empty((n // kind.stride + 1, system.ndim))
    traj[0] = x
    kT = KB * request.params.temperature
    stochastic = kT > 0 and kind.friction > 0
    rng = segment_rng(request.seed, request.cycle)
    energy = total_energy(system, x, request.params)
    done = 0
    while done < n:
        m = min(_NOISE_BLOCK, n - done)
        noise = rng.standard_normal((m, system.ndim)) if stochastic else np.zeros((1, system.ndim))
        status, energy = _baoab(*args, x, v, system.mass, kind.step_size, kind.friction, kT,
                                noise, stochastic, m, done, kind.stride, traj)
        if status != 0 or not (math.isfinite(energy) and np.all(np.isfinite(x))):
            raise EngineError(f"non-finite forces after step {done + m} "
                              f"(step size {kind.step_size} may be too large)")
        done += m
    return EngineResult(
        positions=x,
        velocities=v,
        energy=float(energy),
        trajectory=traj,
        duration=time.perf_counter() - t0,
        steps=n,
    )


def single_point_energy(system: PotentialSystem, positions, foreign: ThermoParams) -> float:
    """Energy of a configuration under someone else's parameters."""
    return total_energy(system, positions, foreign)


def kinetic_energy(system: PotentialSystem, velocities) -> float:
    v = np.asarray(velocities, dtype=float)
    return 0.5 * system.mass * float(v @ v)


class LangevinEngine:
    """Engine adaptor around the module-level functions."""

    def __init__(self, system: PotentialSystem):
        self.system = system

    def run_md_segment(self, request: EngineRequest) -> EngineResult:
        return run_md_segment(self.system, request)

    def single_point_energy(self, positions, foreign: ThermoParams) -> float:
        return single_point_energy(self.system, positions, foreign)

    def energy(self, positions, params: ThermoParams) -> float:
        return total_energy(self.system, positions, params)
