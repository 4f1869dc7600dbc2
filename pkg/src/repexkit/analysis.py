"""Free-energy surfaces, acceptance statistics and round-trip counts."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .exchange import ExchangeRecord
from .model import KB, ReplicaGrid

logger = logging.getLogger(__name__)


class AnalysisError(ValueError):
    pass


@dataclass
class FreeEnergySurface:
    edges: list[np.ndarray]
    free_energy: np.ndarray  # kcal/mol, NaN where unoccupied
    counts: np.ndarray
    temperature: float

    @property
    def occupied(self) -> np.ndarray:
        return self.counts > 0

    @property
    def centers(self) -> list[np.ndarray]:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]


def free_energy_histogram(samples, bins, temperature: float, ranges=None) -> FreeEnergySurface:
    """F = -kT ln p per bin, shifted so the lowest occupied bin sits at zero.

    ``samples`` is (n,) or (n, d); ``bins`` an int or one int per coordinate.
    Empty bins get NaN and are marked unoccupied.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise AnalysisError("no-data: empty sample set")
    d = x.shape[1]
    nbins = [bins] * d if np.isscalar(bins) else list(bins)
    if len(nbins) != d or min(nbins) < 2:
        raise AnalysisError(f"need at least 2 bins for each of {d} coordinates, got {bins}")
    if ranges is not None and d == 1 and np.isscalar(ranges[0]):
        ranges = [ranges]
    counts, edges = np.histogramdd(x, bins=nbins, range=ranges)
    p = counts / counts.sum()
    with np.errstate(divide="ignore"):
        f = -KB * temperature * np.log(p)
    f[counts == 0] = np.nan
    f -= np.nanmin(f)
    return FreeEnergySurface(list(edges), f, counts.astype(np.int64), temperature)


def wham_surface(windows: Sequence[tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]], bins,
                 temperature: float, ranges, tol: float = 1e-10, max_iter: int = 100_000) -> FreeEnergySurface:
    """Unbiased surface from several biased windows by sample-based (binless) WHAM.

    Each window is ``(samples, bias)`` where ``bias`` maps an (m, d) array of
    points to bias energies in kcal/mol. Biases are evaluated at the samples
    themselves, so stiff restraints do not pick up a bin-width error; the
    bins only enter when the reweighted samples are histogrammed at the end.
    Window free energies come from minimising the convex WHAM/MBAR objective;
    ``tol`` bounds its gradient per sample.
    """
    if not windows:
        raise AnalysisError("no-data: no windows")
    beta = 1.0 / (KB * temperature)
    xs = []
    for x, _ in windows:
        x = np.asarray(x, dtype=float)
        xs.append(x[:, None] if x.ndim == 1 else x)
    n_k = np.array([len(x) for x in xs], dtype=float)
    if n_k.sum() == 0:
        raise AnalysisError("no-data: no samples")
    pooled = np.concatenate([x for x in xs if len(x)])
    keep = n_k > 0
    # reduced bias of every pooled sample under every populated window: (K, N)
    bb = beta * np.array([np.asarray(fn(pooled), dtype=float)
                          for (_, fn), k in zip(windows, keep) if k])
    if bb.shape[1:] != (len(pooled),):
        raise AnalysisError("bias functions must return one energy per sample")
    log_nk = np.log(n_k[keep])
    n_total = n_k.sum()

    # Convex objective whose stationary point is the self-consistent solution;
    # the first window's free energy is pinned to zero.
    def objective(g):
        f = np.concatenate([[0.0], g])
        a = log_nk[:, None] + f[:, None] - bb
        lse = logsumexp(a, axis=0)
        grad = np.exp(a - lse).sum(axis=1) - n_k[keep]
        return (lse.sum() - n_k[keep] @ f) / n_total, grad[1:] / n_total

    res = minimize(objective, np.zeros(len(log_nk) - 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0})
    if not res.success and np.max(np.abs(res.jac), initial=0.0) > 1e3 * tol:
        logger.warning("WHAM did not converge: %s", res.message)
    f = np.concatenate([[0.0], res.x])
    log_w = -logsumexp(log_nk[:, None] + f[:, None] - bb, axis=0)
    nb = [bins] * pooled.shape[1] if np.isscalar(bins) else list(bins)
    counts, edges = np.histogramdd(pooled, bins=nb, range=ranges)
    weights, _ = np.histogramdd(pooled, bins=nb, range=ranges, weights=np.exp(log_w - log_w.max()))
    if counts.sum() == 0:
        raise AnalysisError("no-data: no samples inside the histogram range")
    with np.errstate(divide="ignore"):
        free = -np.log(weights) / beta
    free[counts == 0] = np.nan
    free -= np.nanmin(free)
    return FreeEnergySurface(list(edges), free, counts.astype(np.int64), temperature)


def write_surface_csv(surface: FreeEnergySurface, path, names: Sequence[str] | None = None) -> None:
    """Bin centres, F and counts; unoccupied bins are left out.

    Contour plots of these surfaces typically use 1 kcal/mol levels.
    """
    centers = surface.centers
    names = list(names) if names else [f"x{k}" for k in range(len(centers))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "F", "count"])
        for idx in np.argwhere(surface.occupied):
            idx = tuple(idx)
            w.writerow([*(f"{centers[k][i]:.6g}" for k, i in enumerate(idx)),
                        f"{surface.free_energy[idx]:.6f}", int(surface.counts[idx])])


def replay_coords(records: Iterable[ExchangeRecord], initial: Mapping[int, Sequence[int]]):
    """Yield ``(record, coords)`` with the ladder coordinates in force when each record was attempted."""
    coords = {rid: list(c) for rid, c in initial.items()}
    for rec in records:
        yield rec, {rid: tuple(c) for rid, c in coords.items()}
        for p in rec.pairs:
            if p.accepted:
                ci, cj = coords[p.i], coords[p.j]
                ci[rec.dim], cj[rec.dim] = cj[rec.dim], ci[rec.dim]


@dataclass
class AcceptanceStats:
    attempted: int
    accepted: int
    per_pair: dict[tuple[int, int], tuple[int, int]]  # ladder pair -> (accepted, attempted)

    @property
    def ratio(self) -> float | None:
        return self.accepted / self.attempted if self.attempted else None

    def pair_ratio(self, lo: int) -> float | None:
        """Acceptance between ladder slots lo and lo+1; None when never attempted."""
        acc, att = self.per_pair.get((lo, lo + 1), (0, 0))
        return acc / att if att else None


def acceptance_stats(records: Sequence[ExchangeRecord], dimension: int,
                     initial: Mapping[int, Sequence[int]] | ReplicaGrid | None = None) -> AcceptanceStats:
    """Accepted over attempted swaps in one dimension, overall and per adjacent ladder pair.

    Ladder slots come from the attempt-time coordinates stored on each pair
    or, for records read back from disk, from replaying swaps on ``initial``.
    """
    records = [r for r in records if r.dim == dimension]
    if not records:
        raise AnalysisError(f"no-data: no exchange records in dimension {dimension}")
    if isinstance(initial, ReplicaGrid):
        initial = {r.replica_id: r.coords for r in initial.replicas}
    per_pair: dict[tuple[int, int], list[int]] = {}
    attempted = accepted = 0
    stream = replay_coords(records, initial) if initial is not None else ((r, None) for r in records)
    for rec, coords in stream:
        for p in rec.pairs:
            attempted += 1
            accepted += p.accepted
            if coords is not None:
                a, b = coords[p.i][dimension], coords[p.j][dimension]
            elif p.coords_i is not None:
                a, b = p.coords_i[dimension], p.coords_j[dimension]
            else:
                continue
            slot = per_pair.setdefault((min(a, b), max(a, b)), [0, 0])
            slot[0] += p.accepted
            slot[1] += 1
    return AcceptanceStats(attempted, accepted, {k: (v[0], v[1]) for k, v in sorted(per_pair.items())})


def index_traces(records: Iterable[ExchangeRecord], initial: Mapping[int, Sequence[int]],
                 dimension: int) -> dict[int, list[int]]:
    """Ladder index history of every replica in one dimension, starting with its initial index."""
    coords = {rid: list(c) for rid, c in initial.items()}
    traces = {rid: [c[dimension]] for rid, c in coords.items()}
    for rec in records:
        for p in rec.pairs:
            if not p.accepted:
                continue
            ci, cj = coords[p.i], coords[p.j]
            ci[rec.dim], cj[rec.dim] = cj[rec.dim], ci[rec.dim]
            if rec.dim == dimension:
                traces[p.i].append(ci[dimension])
                traces[p.j].append(cj[dimension])
    return traces


def count_round_trips(trace: Sequence[int], top: int) -> int:
    """Completed bottom -> top -> bottom walks in a ladder index sequence."""
    if top <= 0:
        return 0
    trips, seen_bottom, seen_top = 0, False, False
    for k in trace:
        if k == 0:
            if seen_top:
                trips += 1
                seen_top = False
            seen_bottom = True
        elif k == top and seen_bottom:
            seen_top = True
    return trips


def round_trips(records: Sequence[ExchangeRecord], grid: ReplicaGrid | Mapping[int, Sequence[int]],
                dimension: int, ladder_length: int | None = None) -> dict[int, int]:
    if isinstance(grid, ReplicaGrid):
        initial = {r.replica_id: r.coords for r in grid.replicas}
        ladder_length = len(grid.dimensions[dimension])
    else:
        initial = dict(grid)
        if ladder_length is None:
            raise AnalysisError("ladder_length is required when passing raw coordinates")
    if ladder_length <= 1:
        return {rid: 0 for rid in initial}
    traces = index_traces(records, initial, dimension)
    return {rid: count_round_trips(t, ladder_length - 1) for rid, t in traces.items()}
