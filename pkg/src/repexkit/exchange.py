"""Exchange phase: grouping, pairing, Metropolis acceptance and parameter swaps.

Swaps exchange ladder indices between replicas; configurations stay where
they are.
"""
from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .engine import PotentialSystem, ThermoParams, params_for, total_energy
from .model import DimensionKind, ReplicaGrid, ReplicaState, beta

EXCHANGE_STREAM = 0x45584348  # "EXCH"


class ExchangeError(ValueError):
    pass


class Phase(enum.IntEnum):
    EVEN = 0
    ODD = 1


@dataclass(frozen=True)
class PairAttempt:
    i: int
    j: int
    delta: float
    u: float
    accepted: bool
    # ladder coordinates of both replicas at attempt time; not serialized
    coords_i: tuple[int, ...] | None = field(default=None, compare=False)
    coords_j: tuple[int, ...] | None = field(default=None, compare=False)

    def to_json(self) -> dict:
        return {"i": self.i, "j": self.j, "delta": self.delta, "u": self.u,
                "accepted": self.accepted}


@dataclass
class ExchangeRecord:
    cycle: int
    dim: int
    pairs: list[PairAttempt] = field(default_factory=list)

    @property
    def accepted_count(self) -> int:
        return sum(p.accepted for p in self.pairs)

    def to_json(self) -> dict:
        return {"cycle": self.cycle, "dim": self.dim,
                "pairs": [p.to_json() for p in self.pairs]}

    @classmethod
    def from_json(cls, d: Mapping) -> "ExchangeRecord":
        pairs = [PairAttempt(int(p["i"]), int(p["j"]), float(p["delta"]), float(p["u"]),
                             bool(p["accepted"])) for p in d["pairs"]]
        return cls(int(d["cycle"]), int(d["dim"]), pairs)


def active_dimension(cycle: int, num_dims: int) -> int:
    if num_dims < 1:
        raise ExchangeError("invalid-config: need at least one dimension")
    return cycle % num_dims


def phase_for(attempt: int, num_dims: int) -> Phase:
    """Even/odd pairing alternates with each attempt made in the same dimension."""
    return Phase((attempt // num_dims) % 2)


def group_by_inactive(replicas: ReplicaGrid | Iterable[ReplicaState],
                      active_dim: int) -> list[list[ReplicaState]]:
    """Partition by the coordinates of every dimension except ``active_dim``.

    Failed replicas are left out when a grid is passed. Groups come out in
    lexicographic order of their shared coordinates; members are ordered by
    their ladder index in the active dimension.
    """
    members = replicas.active() if isinstance(replicas, ReplicaGrid) else list(replicas)
    groups: dict[tuple, list[ReplicaState]] = defaultdict(list)
    for r in members:
        key = r.coords[:active_dim] + r.coords[active_dim + 1:]
        groups[key].append(r)
    return [sorted(groups[k], key=lambda r: r.coords[active_dim]) for k in sorted(groups)]


def pair_neighbors(group: Sequence, phase: Phase | int, key: Callable | None = None) -> list[tuple]:
    """Alternating nearest-neighbour pairs: (0,1),(2,3).. or (1,2),(3,4)..

    With ``key`` given, consecutive members are only paired when their
    ladder indices are adjacent; a gap shifts the walk by one so that a
    missing slot never produces a non-neighbour pair.
    """
    pairs = []
    i = int(Phase(phase))
    while i + 1 < len(group):
        a, b = group[i], group[i + 1]
        if key is None or key(b) - key(a) == 1:
            pairs.append((a, b))
            i += 2
        else:
            i += 1
    return pairs


def acceptance_delta(kind, params_i: ThermoParams, params_j: ThermoParams,
                     e_ii: float, e_jj: float, e_ij: float | None = None,
                     e_ji: float | None = None) -> float:
    """Reduced energy change of swapping the parameters of replicas i and j.

    ``e_ab`` is the potential of ensemble a evaluated at the configuration of
    replica b. For temperature exchange the Hamiltonians coincide, so the
    cross terms default to the own energies and the expression reduces to
    (beta_i - beta_j)(U(x_j) - U(x_i)).
    """
    kind = DimensionKind(kind)
    if kind is DimensionKind.TEMPERATURE:
        e_ij = e_jj if e_ij is None else e_ij
        e_ji = e_ii if e_ji is None else e_ji
    elif e_ij is None or e_ji is None:
        raise ExchangeError(f"{kind.value} exchange needs cross energies")
    energies = (e_ii, e_jj, e_ij, e_ji)
    if not all(math.isfinite(e) for e in energies):
        raise ExchangeError(f"invalid-energy: non-finite energy in {energies}")
    if not (params_i.temperature > 0 and params_j.temperature > 0):
        raise ExchangeError("invalid-energy: temperatures must be > 0")
    bi, bj = beta(params_i.temperature), beta(params_j.temperature)
    return bi * (e_ij - e_ii) + bj * (e_ji - e_jj)


def acceptance_probability(delta: float) -> float:
    return 1.0 if delta <= 0 else math.exp(-delta)


def exchange_rng(seed: int, cycle: int, dim: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, EXCHANGE_STREAM, cycle, dim]))


def plan_pairs(replicas: ReplicaGrid | Iterable[ReplicaState], dim: int,
               phase: Phase | int) -> list[tuple[ReplicaState, ReplicaState]]:
    """All pairs for one exchange phase, over the given (possibly partial) set."""
    pairs = []
    for group in group_by_inactive(replicas, dim):
        pairs.extend(pair_neighbors(group, phase, key=lambda r: r.coords[dim]))
    return pairs


def cross_energy_requests(grid: ReplicaGrid, pairs) -> list[tuple[int, int, ThermoParams]]:
    """(evaluating replica, owner of the foreign params, foreign params) per needed U_a(x_b)."""
    out = []
    for a, b in pairs:
        out.append((b.replica_id, a.replica_id, params_for(grid, a.coords)))
        out.append((a.replica_id, b.replica_id, params_for(grid, b.coords)))
    return out


def attempt_exchanges(grid: ReplicaGrid, system: PotentialSystem, pairs, dim: int, cycle: int,
                      seed: int, cross: Mapping[tuple[int, int], float] | None = None,
                      delta_fn: Callable = acceptance_delta) -> ExchangeRecord:
    """Evaluate the Metropolis test for ``pairs`` and return the record.

    ``cross[(a, b)]`` supplies U_a(x_b) computed elsewhere (by energy tasks);
    anything missing is evaluated inline. Draws come from a stream keyed on
    (seed, cycle, dim), one per pair in order.
    """
    kind = grid.dimensions[dim].kind
    rng = exchange_rng(seed, cycle, dim)
    cross = cross or {}
    record = ExchangeRecord(cycle, dim)

    def energy(a: ReplicaState, b: ReplicaState, pa: ThermoParams) -> float:
        if (a.replica_id, b.replica_id) in cross:
            return cross[(a.replica_id, b.replica_id)]
        return total_energy(system, b.positions, pa)

    for a, b in pairs:
        pa, pb = params_for(grid, a.coords), params_for(grid, b.coords)
        e_aa, e_bb = energy(a, a, pa), energy(b, b, pb)
        e_ab, e_ba = energy(a, b, pa), energy(b, a, pb)
        delta = float(delta_fn(kind, pa, pb, e_aa, e_bb, e_ab, e_ba))
        u = float(rng.random())
        record.pairs.append(PairAttempt(a.replica_id, b.replica_id, delta, u,
                                        u < acceptance_probability(delta),
                                        coords_i=a.coords, coords_j=b.coords))
    return record


def apply_swaps(grid: ReplicaGrid, record: ExchangeRecord) -> ReplicaGrid:
    """Swap the active-dimension ladder index of every accepted pair, in place."""
    seen: set[int] = set()
    for p in record.pairs:
        if p.i == p.j or p.i in seen or p.j in seen:
            raise ExchangeError(f"invalid-record: overlapping pairs at replica {p.i} or {p.j}")
        seen.update((p.i, p.j))
    d = record.dim
    for p in record.pairs:
        if not p.accepted:
            continue
        ri, rj = grid[p.i], grid[p.j]
        ci, cj = list(ri.coords), list(rj.coords)
        ci[d], cj[d] = cj[d], ci[d]
        ri.coords, rj.coords = tuple(ci), tuple(cj)
    return grid


def differs_only_in(coords_i: Sequence[int], coords_j: Sequence[int], dim: int) -> bool:
    return all((a != b) == (k == dim) for k, (a, b) in enumerate(zip(coords_i, coords_j)))
