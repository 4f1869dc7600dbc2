"""Command line entry point: ``repexkit {run,simulate,analyze,validate}``."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .analysis import AnalysisError, acceptance_stats, free_energy_histogram, round_trips, wham_surface, \
    write_surface_csv
from .config import ConfigError, SimulationConfig, dump_config, parse_config
from .engine import ConfigurationError, EngineError, Restraint, restraint_energy
from .metrics import MetricsError, strong_efficiency, utilization_from_trace, weak_efficiency
from .model import DimensionKind, ModelError
from .pilot import PilotError, RealWorkers, VirtualClock, execution_mode, max_concurrency, run_async, run_sync
from .pilot.scheduler import wave_count

logger = logging.getLogger("repexkit")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}

COMPONENTS = ["t_md", "t_ex", "t_data", "t_framework_over", "t_launch_over", "t_c"]


class CliError(RuntimeError):
    """Problem the user can fix; reported without a traceback."""


def setup_logging() -> None:
    name = os.environ.get("REPEX_LOG_LEVEL", "warn").lower()
    level = LOG_LEVELS.get(name)
    if level is None:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if name not in LOG_LEVELS:
        logger.warning("unknown REPEX_LOG_LEVEL %r; using 'warn'", name)


def load_config(path, seed: int | None = None) -> SimulationConfig:
    if path is None:
        raise CliError("--config is required")
    config = parse_config(path)
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            raise CliError(f"--seed must be an unsigned 64-bit integer, got {seed}")
        config.seed = seed
    return config


def _out_dir(config: SimulationConfig, out) -> Path:
    path = Path(out if out is not None else config.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- run / simulate ----------------------------------------------------------

def _execute(config: SimulationConfig, out: Path, restart: dict | None = None):
    system = config.build_system()
    grid = config.build_grid()
    pilot = config.build_pilot()
    criterion = config.build_criterion()
    kwargs = dict(seed=config.seed, faults=config.build_faults(), keep_samples=config.keep_samples)
    start_cycle = 0
    if restart is not None:
        if restart["pattern"] != "sync" or criterion is not None:
            raise CliError("only synchronous runs can be resumed from a restart file")
        if restart["seed"] != config.seed:
            raise CliError(f"restart file was written with seed {restart['seed']}, config has {config.seed}")
        if len(restart["replicas"]) != len(grid):
            raise CliError(f"restart file holds {len(restart['replicas'])} replicas, config defines {len(grid)}")
        for state in restart["replicas"]:
            current = grid[state.replica_id]
            current.coords, current.positions, current.velocities = state.coords, state.positions, state.velocities
            current.seed, current.cycle, current.status = state.seed, state.cycle, state.status
        start_cycle = restart["next_cycle"]
        kwargs.update(start_time=restart["time"], start_task_id=restart["next_task_id"])
    remaining = max(config.cycles - start_cycle, 0)
    mode = execution_mode(pilot, grid)
    logger.info("%s run: %d replicas on %d cores (mode %s), cycles %d..%d", config.pattern.type, len(grid),
                pilot.total_cores, mode.value, start_cycle, config.cycles)
    if criterion is None:
        log = run_sync(grid, pilot, remaining, system, config.build_segment(), start_cycle=start_cycle, **kwargs)
    else:
        log = run_async(grid, pilot, remaining, criterion, system, config.build_segment(), **kwargs)
    append = restart is not None
    cp = log.checkpoint
    if cp is not None:
        events, exchanges = log.events[:cp["n_events"]], log.exchanges[:cp["n_exchanges"]]
        timings, samples = log.timings[:cp["n_timings"]], log.samples[:cp["n_samples"]]
    else:
        events, exchanges, timings, samples = log.events, log.exchanges, log.timings, log.samples
    io.write_exchanges(out / io.EXCHANGES, exchanges, append)
    io.write_trace(out / io.TRACE, events, append)
    io.write_timing(out / io.TIMING, timings, append)
    io.write_samples(out / io.SAMPLES, samples, len(grid.dimensions), system.ndim, append)
    if cp is not None:
        io.write_restart(out / io.RESTART, pattern="sync", seed=config.seed, next_cycle=cp["next_cycle"],
                         time=cp["time"], next_task_id=cp["next_task_id"], replicas=cp["replicas"])
    else:
        io.write_restart(out / io.RESTART, pattern=log.pattern, seed=config.seed, next_cycle=log.next_cycle,
                         time=log.makespan, next_task_id=log.next_task_id, replicas=grid.replicas)
    dump_config(config, out / io.CONFIG)

    trace = io.read_trace(out / io.TRACE)
    conc = max_concurrency(pilot)
    waves = max(log.md_waves) if log.md_waves else wave_count(len(grid.active()), conc)
    ts = [e["t"] for e in trace]
    span = (max(ts) - min(ts)) if ts else 0.0
    summary = {
        "pattern": log.pattern, "replicas": len(grid), "total_cores": pilot.total_cores,
        "cores_per_replica": pilot.cores_per_replica, "concurrency": conc, "execution_mode": mode.value,
        "cycles": config.cycles if cp is None else cp["next_cycle"], "md_waves_per_cycle": waves,
        "makespan": repr(span),
        "md_busy": repr(sum(e["work"] * e["cores"] for e in trace if e["event"] == "end" and e["kind"] == "md")),
        "utilization": repr(utilization_from_trace(trace, pilot.total_cores)) if span > 0 else "",
        "peak_cores": log.peak_cores, "failed_replicas": len(log.failed), "truncated": int(log.truncated),
        "wall_clock_s": f"{log.wall_time:.3f}",
    }
    io.write_summary(out / io.SUMMARY, summary)
    if log.truncated:
        logger.warning("walltime reached; resume with --restart %s", out / io.RESTART)
    return log


def cmd_run(args) -> int:
    config = load_config(args.config, args.seed)
    if not isinstance(config.build_pilot().backend, RealWorkers):
        raise CliError("'run' executes MD on worker threads; set pilot.backend.type to 'real' "
                       "or use 'simulate' for a virtual-clock study")
    out = _out_dir(config, args.out)
    restart = io.read_restart(args.restart) if args.restart else None
    log = _execute(config, out, restart)
    failed = len(log.failed)
    print(f"{log.pattern} run finished: {len(log.exchanges)} exchange phases, {failed} failed replicas, "
          f"artifacts in {out}")
    if log.grid.replicas and failed == len(log.grid.replicas):
        print("error: every replica failed", file=sys.stderr)
        return 1
    return 0


def cmd_simulate(args) -> int:
    config = load_config(args.config, args.seed)
    if not isinstance(config.build_pilot().backend, VirtualClock):
        raise CliError("'simulate' only runs on the virtual clock; set pilot.backend.type to 'virtual' "
                       "(use 'run' to execute MD on real workers)")
    if args.restart:
        raise CliError("--restart applies to 'run' only")
    out = _out_dir(config, args.out)
    log = _execute(config, out)
    try:
        rows = _metrics_rows(out, None)
    except AnalysisError:  # zero cycles: headers only
        rows = []
    write_metrics(out, rows)
    print(f"simulated {log.pattern} schedule: makespan {log.makespan:g} s, "
          f"utilization {log.utilization():.2f} %, artifacts in {out}" if log.makespan > 0 else
          f"simulated {log.pattern} schedule: nothing to run, artifacts in {out}")
    return 0


# -- analyze -----------------------------------------------------------------

def _require(run_dir: Path, name: str) -> Path:
    path = run_dir / name
    if not path.exists():
        raise CliError(f"missing artifact {path}; is {run_dir} a run directory?")
    return path


def _timing_means(run_dir: Path) -> dict[str, float]:
    rows = io.read_timing(_require(run_dir, io.TIMING))
    if not rows:
        raise AnalysisError(f"no-data: {run_dir} has no completed cycles")
    return {c: float(np.mean([r[c] for r in rows])) for c in COMPONENTS} | {"cycles": len(rows)}


def _metrics_rows(run_dir: Path, baseline: Path | None) -> list[tuple[str, str, float]]:
    run = run_dir.name or str(run_dir)
    means = _timing_means(run_dir)
    config = parse_config(_require(run_dir, io.CONFIG))
    trace = io.read_trace(_require(run_dir, io.TRACE))
    rows = [(run, "cycles", means["cycles"])]
    rows += [(run, f"mean_{c}", means[c]) for c in COMPONENTS]
    ts = [e["t"] for e in trace]
    if ts and max(ts) > min(ts):
        rows.append((run, "makespan", max(ts) - min(ts)))
        rows.append((run, "utilization", utilization_from_trace(trace, config.pilot.cores)))
    if baseline is not None:
        base = _timing_means(baseline)
        base_cfg = parse_config(_require(baseline, io.CONFIG))
        rows.append((run, "weak_efficiency", weak_efficiency(base["t_c"], means["t_c"])))
        factor = config.pilot.cores / base_cfg.pilot.cores
        if factor >= 1:
            rows.append((run, "strong_efficiency", strong_efficiency(base["t_c"], means["t_c"], factor)))
        else:
            logger.warning("run uses fewer cores than the baseline; strong efficiency not reported")
    return rows


def write_metrics(out: Path, rows) -> None:
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "metric", "value"])
        for run, metric, value in rows:
            w.writerow([run, metric, repr(float(value))])


def _acceptance(run_dir: Path, config: SimulationConfig, out: Path, rows: list) -> None:
    records = io.read_exchanges(_require(run_dir, io.EXCHANGES))
    grid = config.build_grid()
    initial = {r.replica_id: r.coords for r in grid.replicas}
    run = run_dir.name or str(run_dir)
    with open(out / "acceptance.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dim", "kind", "lo", "hi", "accepted", "attempted", "ratio"])
        for d, spec in enumerate(grid.dimensions):
            if not any(r.dim == d for r in records):
                continue
            stats = acceptance_stats(records, d, initial)
            for (lo, hi), (acc, att) in stats.per_pair.items():
                w.writerow([d, spec.kind.value, lo, hi, acc, att, repr(acc / att)])
            if stats.ratio is not None:
                rows.append((run, f"acceptance_dim{d}", stats.ratio))
            trips = round_trips(records, initial, d, len(spec))
            rows.append((run, f"round_trips_dim{d}", sum(trips.values())))


def _surface(run_dir: Path, config: SimulationConfig, out: Path) -> Path | None:
    path = run_dir / io.SAMPLES
    if not path.exists():
        return None
    ladder_idx, x = io.read_samples(path)
    if len(x) == 0:
        return None
    grid = config.build_grid()
    system = config.build_system()
    dims = grid.dimensions
    # reference ensemble: first temperature of the ladder, lambda closest to 1
    keep = np.ones(len(x), dtype=bool)
    temperature = grid.base_temperature
    for d, spec in enumerate(dims):
        if spec.kind is DimensionKind.TEMPERATURE:
            keep &= ladder_idx[:, d] == 0
            temperature = spec.ladder[0].value
        elif spec.kind is DimensionKind.HAMILTONIAN_SCALE:
            best = int(np.argmin([abs(p.value - 1.0) for p in spec.ladder]))
            keep &= ladder_idx[:, d] == best
    periodic = system.ndim == 2
    bins = 36 if periodic else 50
    ranges = [(0.0, 360.0)] * 2 if periodic else [(-3.0, 3.0)]
    names = ["phi", "psi"] if periodic else ["x"]
    umbrella = [d for d, spec in enumerate(dims) if spec.kind is DimensionKind.UMBRELLA]
    if not keep.any():
        return None
    if umbrella:
        windows = []
        cells = {tuple(row) for row in ladder_idx[keep][:, umbrella]}
        for cell in sorted(cells):
            mask = keep & np.all(ladder_idx[:, umbrella] == np.array(cell), axis=1)
            restraints = tuple(Restraint(dims[d].ladder[c].value, dims[d].force_constant, dims[d].coordinate)
                               for d, c in zip(umbrella, cell))

            windows.append((x[mask], lambda points, rs=restraints: restraint_energy(system, points, rs)))
        surface = wham_surface(windows, bins, temperature, ranges)
    else:
        surface = free_energy_histogram(x[keep], bins, temperature, ranges)
    target = out / "free_energy.csv"
    write_surface_csv(surface, target, names)
    return target


def cmd_analyze(args) -> int:
    if args.out is None and args.config is None:
        raise CliError("give the run directory with --out")
    run_dir = Path(args.out) if args.out is not None else Path(parse_config(args.config).output)
    if not run_dir.is_dir():
        raise CliError(f"run directory {run_dir} does not exist")
    baseline = Path(args.baseline) if args.baseline else None
    rows = _metrics_rows(run_dir, baseline)
    config = parse_config(run_dir / io.CONFIG)
    _acceptance(run_dir, config, run_dir, rows)
    surface = _surface(run_dir, config, run_dir)
    write_metrics(run_dir, rows)
    for _, metric, value in rows:
        print(f"{metric:>24s}  {value:.6g}")
    if surface is not None:
        print(f"free-energy surface written to {surface}")
    return 0


# -- validate ----------------------------------------------------------------

def cmd_validate(args) -> int:
    from .validation import format_report, run_all
    results = run_all(quick=args.quick)
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


# -- entry point ---------------------------------------------------------------

def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"{text} is not an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repexkit", description="Multi-dimensional replica exchange toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", metavar="PATH", help="JSON run configuration")
            p.add_argument("--seed", type=_u64, metavar="U64", help="override the configured seed")
        p.add_argument("--out", metavar="DIR", help="run directory (defaults to the configured output)")

    p = sub.add_parser("run", help="run replica exchange with MD on worker threads")
    common(p)
    p.add_argument("--restart", metavar="PATH", help="resume a synchronous run from its restart.json")
    p.set_defaults(func=cmd_run, baseline=None)

    p = sub.add_parser("simulate", help="schedule a run on the virtual clock")
    common(p)
    p.add_argument("--restart", metavar="PATH", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_simulate, baseline=None)

    p = sub.add_parser("analyze", help="metrics, acceptance and free energy of a finished run")
    common(p)
    p.add_argument("--baseline", metavar="DIR", help="reference run for weak/strong efficiency")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="run the built-in correctness checks")
    p.add_argument("--quick", action="store_true", help="shorter sampling runs")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ConfigError, ConfigurationError, ModelError, PilotError, MetricsError, AnalysisError,
            EngineError, io.RunFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
