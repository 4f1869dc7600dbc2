"""Independent oracles and the built-in validation suite.

The oracles here never go through the engine or the exchange code: target
distributions come from quadrature of exp(-U/kT) written out directly in
numpy, and exact samples from rejection sampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import (
    DoubleWell1D,
    EngineRequest,
    MDSegment,
    Restraint,
    ThermoParams,
    Torsion2D,
    energy_and_gradient,
    run_md_segment,
)
from .exchange import (
    acceptance_delta,
    apply_swaps,
    attempt_exchanges,
    phase_for,
    plan_pairs,
)
from .model import KB, DimensionSpec, build_grid, build_ladder

# ---------------------------------------------------------------------------
# oracles


def double_well_u(x, a=1.0, b=2.0):
    x = np.asarray(x, dtype=float)
    return a * x ** 4 - b * x ** 2


def torsion_u(phi, psi, A=3.0, B=3.0, C=1.5):
    r = np.pi / 180.0
    return A * (1 - np.cos(phi * r)) + B * (1 - np.cos(psi * r)) + C * np.cos((phi + psi) * r)


def double_well_bin_probabilities(temperature: float, bins: int = 50, lo: float = -3.0, hi: float = 3.0,
                                  points: int = 2001, a: float = 1.0, b: float = 2.0) -> np.ndarray:
    """Boltzmann probability of each histogram bin by trapezoid quadrature.

    The normalisation uses the same ``points``-point grid over [lo, hi]; bin
    edges must fall on grid points, i.e. (points - 1) divisible by ``bins``.
    """
    if (points - 1) % bins:
        raise ValueError("grid points must align with bin edges")
    x = np.linspace(lo, hi, points)
    u = double_well_u(x, a, b)
    w = np.exp(-(u - u.min()) / (KB * temperature))
    per = (points - 1) // bins
    dx = x[1] - x[0]
    probs = np.array([np.sum(0.5 * (w[k * per:(k + 1) * per] + w[k * per + 1:(k + 1) * per + 1])) * dx
                      for k in range(bins)])
    return probs / probs.sum()


def torsion_marginal_bin_probabilities(temperature: float, bins: int = 36, axis: int = 0,
                                       points: int = 720, **params) -> np.ndarray:
    """Marginal bin probabilities of phi (axis 0) or psi (axis 1) over [0, 360).

    Midpoint rule on a periodic grid, which converges spectrally here.
    """
    if points % bins:
        raise ValueError("grid points must align with bin edges")
    g = (np.arange(points) + 0.5) * (360.0 / points)
    phi, psi = np.meshgrid(g, g, indexing="ij")
    u = torsion_u(phi, psi, **params)
    w = np.exp(-(u - u.min()) / (KB * temperature))
    probs = w.sum(axis=1 - axis).reshape(bins, -1).sum(axis=1)
    return probs / probs.sum()


def sample_double_well(temperature: float, n: int, rng: np.random.Generator,
                       lo: float = -3.0, hi: float = 3.0, a: float = 1.0, b: float = 2.0) -> np.ndarray:
    """Exact Boltzmann samples on [lo, hi] by rejection from a uniform proposal."""
    umin = -b * b / (4 * a) if b > 0 else 0.0
    kT = KB * temperature
    out = np.empty(0)
    while out.size < n:
        m = max(2 * (n - out.size), 1000)
        x = rng.uniform(lo, hi, m)
        keep = rng.random(m) < np.exp(-(double_well_u(x, a, b) - umin) / kT)
        out = np.concatenate([out, x[keep]])
    return out[:n]


def expected_swap_acceptance(t_i: float, t_j: float, lo: float = -3.0, hi: float = 3.0,
                             points: int = 2001, a: float = 1.0, b: float = 2.0) -> float:
    """E[min(1, exp(-delta))] for a temperature swap, by 2D trapezoid quadrature.

    x_i ~ Boltzmann(T_i), x_j ~ Boltzmann(T_j), delta = (b_i - b_j)(U(x_j) - U(x_i)).
    """
    x = np.linspace(lo, hi, points)
    u = double_well_u(x, a, b)
    wt = np.full(points, x[1] - x[0])
    wt[0] = wt[-1] = 0.5 * (x[1] - x[0])
    bi, bj = 1 / (KB * t_i), 1 / (KB * t_j)
    pi = np.exp(-bi * (u - u.min())) * wt
    pj = np.exp(-bj * (u - u.min())) * wt
    pi /= pi.sum()
    pj /= pj.sum()
    # rows: x_i, columns: x_j
    delta = (bi - bj) * (u[None, :] - u[:, None])
    acc = np.exp(-np.clip(delta, 0.0, None))
    return float(pi @ acc @ pj)


def double_well_energy_moments(temperature: float, lo: float = -3.0, hi: float = 3.0,
                               points: int = 20001, a: float = 1.0, b: float = 2.0) -> tuple[float, float]:
    """Boltzmann mean and standard deviation of U on [lo, hi] by quadrature."""
    x = np.linspace(lo, hi, points)
    u = double_well_u(x, a, b)
    w = np.exp(-(u - u.min()) / (KB * temperature))
    w /= w.sum()
    mean = float(w @ u)
    return mean, float(np.sqrt(w @ (u - mean) ** 2))


def l1_distance(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def histogram_probabilities(x, bins: int = 50, lo: float = -3.0, hi: float = 3.0) -> np.ndarray:
    h, _ = np.histogram(np.asarray(x).ravel(), bins=bins, range=(lo, hi))
    return h / max(h.sum(), 1)


# ---------------------------------------------------------------------------
# checks


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_boltzmann(temperature: float = 300.0, steps: int = 10 ** 6, stride: int = 100,
                    step_size: float = 0.05, seed: int = 0, tol: float = 0.05) -> CheckResult:
    system = DoubleWell1D()
    req = EngineRequest(system.minimum(), np.zeros(1), seed, ThermoParams(temperature),
                        MDSegment(steps, step_size, 1.0, stride))
    traj = run_md_segment(system, req).trajectory
    err = l1_distance(histogram_probabilities(traj), double_well_bin_probabilities(temperature))
    return CheckResult(f"boltzmann T={temperature:g}K", err <= tol, f"L1={err:.4f} (tol {tol})")


@dataclass
class DetailedBalanceResult:
    temperatures: list[float]
    slot_l1: list[float]
    acceptance: list[float]
    expected: list[float]
    attempts: list[int]
    energy_z: list[float]


def detailed_balance_experiment(attempts: int = 10 ** 5, n_temps: int = 4, seed: int = 0,
                                delta_fn: Callable = acceptance_delta) -> DetailedBalanceResult:
    """Exchange phases on a temperature ladder with exact sampling in place of MD.

    Before every phase each replica's configuration is redrawn from the
    Boltzmann distribution at its current temperature; the configuration that
    sits in each ladder slot after the phase is histogrammed.
    """
    temps = build_ladder("temperature", 273.0, 373.0, n_temps, "geometric")
    system = DoubleWell1D()
    grid = build_grid([DimensionSpec.from_values("temperature", temps)], [1.0], seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB0]))
    pool = [sample_double_well(t, attempts, rng) for t in temps]
    post = np.empty((n_temps, attempts))
    accepted = np.zeros(n_temps - 1)
    tried = np.zeros(n_temps - 1, dtype=int)
    for k in range(attempts):
        for r in grid.replicas:
            r.positions = np.array([pool[r.coords[0]][k]])
        pairs = plan_pairs(grid, 0, phase_for(k, 1))
        record = attempt_exchanges(grid, system, pairs, 0, k, seed, delta_fn=delta_fn)
        for (a, _), p in zip(pairs, record.pairs):
            slot = a.coords[0]
            tried[slot] += 1
            accepted[slot] += p.accepted
        apply_swaps(grid, record)
        for r in grid.replicas:
            post[r.coords[0], k] = r.positions[0]
    slot_l1 = [l1_distance(histogram_probabilities(post[s]), double_well_bin_probabilities(t))
               for s, t in enumerate(temps)]
    acc = list(accepted / np.maximum(tried, 1))
    expected = [expected_swap_acceptance(temps[s], temps[s + 1]) for s in range(n_temps - 1)]
    # post-phase samples in a slot are independent draws, so a plain z-score applies
    energy_z = []
    for s, t in enumerate(temps):
        mean, sd = double_well_energy_moments(t)
        energy_z.append(float((double_well_u(post[s]).mean() - mean) / (sd / np.sqrt(attempts))))
    return DetailedBalanceResult(temps, slot_l1, acc, expected, [int(n) for n in tried], energy_z)


def check_detailed_balance(attempts: int = 10 ** 5, seed: int = 0, l1_tol: float = 0.05,
                           acc_tol: float = 0.02, z_tol: float = 5.0,
                           delta_fn: Callable = acceptance_delta) -> CheckResult:
    """Histogram L1 and acceptance bounds, plus a per-slot mean-energy z-test.

    Neighbouring slots of this ladder overlap so much that a histogram alone
    barely notices a broken criterion; the mean energy does.
    """
    res = detailed_balance_experiment(attempts, seed=seed, delta_fn=delta_fn)
    worst_l1 = max(res.slot_l1)
    worst_acc = max(abs(a - e) for a, e in zip(res.acceptance, res.expected))
    worst_z = max(abs(z) for z in res.energy_z)
    ok = worst_l1 <= l1_tol and worst_acc <= acc_tol and worst_z <= z_tol
    return CheckResult("detailed balance", ok,
                       f"max slot L1={worst_l1:.4f} (tol {l1_tol}), "
                       f"max |acc - E[acc]|={worst_acc:.4f} (tol {acc_tol}), "
                       f"max |z(<U>)|={worst_z:.2f} (tol {z_tol:g})")


def finite_difference_gradient(system, x, params: ThermoParams, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (energy_and_gradient(system, xp, params)[0]
                - energy_and_gradient(system, xm, params)[0]) / (2 * h)
    return g


def gradient_errors(n_points: int = 100, seed: int = 0, h: float = 1e-5) -> np.ndarray:
    """Relative analytic-vs-central-difference force errors, both systems, random restraints."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_points):
        dw = DoubleWell1D(a=rng.uniform(0.5, 2), b=rng.uniform(0.5, 3))
        x = rng.uniform(-2.5, 2.5, 1)
        params = ThermoParams(300.0, (Restraint(rng.uniform(-2, 2), rng.uniform(0, 5), 0),),
                              lam=rng.uniform(0, 1))
        errs.append(_rel_err(dw, x, params, h))
        ts = Torsion2D(*rng.uniform(0.5, 4, 3))
        # keep clear of the minimal-image cut at +/-180 deg from each centre
        centres = rng.uniform(0, 360, 2)
        offsets = rng.uniform(-170, 170, 2)
        y = np.mod(centres + offsets, 360.0)
        params = ThermoParams(300.0, (Restraint(centres[0], 0.02, 0), Restraint(centres[1], 0.05, 1)),
                              lam=rng.uniform(0, 1), term=str(rng.choice(["all", "phi", "psi", "coupling"])))
        errs.append(_rel_err(ts, y, params, h))
    return np.concatenate(errs)


def _rel_err(system, x, params, h):
    analytic = energy_and_gradient(system, x, params)[1]
    fd = finite_difference_gradient(system, x, params, h)
    scale = np.maximum(np.abs(analytic), 1e-3)
    return np.abs(analytic - fd) / scale


def check_gradients(tol: float = 1e-6) -> CheckResult:
    worst = float(gradient_errors().max())
    return CheckResult("gradient vs finite differences", worst <= tol, f"max rel err={worst:.2e} (tol {tol:g})")


def check_scheduler() -> list[CheckResult]:
    from .pilot import (
        Constant,
        DurationModel,
        FaultPolicy,
        FifoN,
        LogNormal,
        PilotSpec,
        core_usage_profile,
        run_async,
        run_sync,
    )

    out = []
    dims = [DimensionSpec.from_values("temperature", build_ladder("temperature", 273, 373, 512))]
    spec = PilotSpec(128, 1, durations=DurationModel(md=Constant(10.0), launch_overhead=0.5))
    log = run_sync(build_grid(dims, [1.0]), spec, 1, DoubleWell1D(), MDSegment(1, 0.01))
    md_end = max(e["t"] for e in log.events if e["event"] == "end" and e["kind"] == "md")
    peak = max(c for _, c in core_usage_profile(log.events))
    out.append(CheckResult("mode II wave law", md_end == 4 * 10.5 and peak <= 128,
                           f"MD phase {md_end:g}s (expect 42s), peak cores {peak}"))

    dims = [DimensionSpec.from_values("temperature", build_ladder("temperature", 273, 373, 16))]
    spec = PilotSpec(4, 1, durations=DurationModel(md=LogNormal.from_mean(10, 0.75)))
    log = run_sync(build_grid(dims, [1.0]), spec, 5, DoubleWell1D(), MDSegment(1, 0.01), seed=3)
    ok = barrier_violations(log.events) == 0
    out.append(CheckResult("sync barrier", ok, "no MD start before previous exchange" if ok else "violated"))

    grid = build_grid(dims, [1.0])
    log = run_async(grid, spec, 5, FifoN(4), DoubleWell1D(), MDSegment(1, 0.01), seed=3,
                    faults=FaultPolicy(0.0))
    ok = all(r.cycle == 5 for r in grid.replicas)
    out.append(CheckResult("async liveness (p=0)", ok, f"cycles reached: {sorted({r.cycle for r in grid.replicas})}"))
    return out


def barrier_violations(events) -> int:
    """MD starts of cycle c+1 that precede the cycle-c exchange of a sync run."""
    exchange_t = {e["cycle"]: e["t"] for e in events if e["event"] == "exchange"}
    bad = 0
    for e in events:
        if e["event"] == "start" and e.get("kind") == "md" and e["cycle"] > 0:
            t_ex = exchange_t.get(e["cycle"] - 1)
            if t_ex is None or e["t"] < t_ex:
                bad += 1
    return bad


def run_all(delta_fn: Callable = acceptance_delta, quick: bool = False) -> list[CheckResult]:
    results = [check_boltzmann(t, stride=10) for t in (280.0, 300.0, 330.0)]
    results.append(check_detailed_balance(attempts=2 * 10 ** 4 if quick else 10 ** 5, delta_fn=delta_fn))
    results.append(check_gradients())
    results.extend(check_scheduler())
    return results


def format_report(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'check'.ljust(width)}  result  detail"]
    for r in results:
        lines.append(f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL':6}  {r.detail}")
    return "\n".join(lines)

