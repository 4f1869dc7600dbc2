"""On-disk formats of a run directory.

``exchanges.jsonl``  one exchange phase per line
``trace.jsonl``      one pilot event per line (logical clock, no wall time)
``timing.csv``       per-cycle time decomposition; ``wall_t_c`` is the only wall-clock column
``samples.csv``      trajectory frames with the ladder coordinates they were sampled in
``summary.csv``      one row describing the whole run
``restart.json``     replica states and counters for resuming a synchronous run
"""
from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exchange import ExchangeRecord
from .metrics import cycle_time
from .model import ReplicaState
from .pilot.patterns import Sample, TimingRow

logger = logging.getLogger(__name__)

EXCHANGES = "exchanges.jsonl"
TRACE = "trace.jsonl"
TIMING = "timing.csv"
SAMPLES = "samples.csv"
SUMMARY = "summary.csv"
RESTART = "restart.json"
CONFIG = "config.json"

RESTART_FORMAT = "repexkit-restart/1"

TIMING_COLUMNS = ["cycle", "dim", "t_md", "t_ex", "t_data", "t_framework_over", "t_launch_over", "t_c",
                  "wall_t_c"]
SUMMARY_COLUMNS = ["pattern", "replicas", "total_cores", "cores_per_replica", "concurrency",
                   "execution_mode", "cycles", "md_waves_per_cycle", "makespan", "md_busy",
                   "utilization", "peak_cores", "failed_replicas", "truncated", "wall_clock_s"]


class RunFileError(RuntimeError):
    pass


def _num(x: float) -> str:
    return repr(float(x))


# -- exchanges --------------------------------------------------------------

def write_exchanges(path, records: Iterable[ExchangeRecord], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), separators=(",", ":")) + "\n")


def read_exchanges(path) -> list[ExchangeRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(ExchangeRecord.from_json(json.loads(line)))
                except (ValueError, KeyError) as exc:
                    raise RunFileError(f"{path}:{n}: bad exchange record ({exc})") from None
    return out


# -- event trace --------------------------------------------------------------

def write_trace(path, events: Iterable[dict], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(json.dumps(e, separators=(",", ":")) + "\n")


def read_trace(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# -- timing -------------------------------------------------------------------

def _open_csv(path, header: Sequence[str], append: bool):
    new = not append or not Path(path).exists() or Path(path).stat().st_size == 0
    fh = open(path, "a" if not new else "w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    if new:
        w.writerow(header)
    return fh, w


def write_timing(path, rows: Iterable[TimingRow], append: bool = False) -> None:
    fh, w = _open_csv(path, TIMING_COLUMNS, append)
    with fh:
        for row in rows:
            t = row.timing
            w.writerow([row.cycle, row.dim, _num(t.t_md), _num(t.t_ex), _num(t.t_data),
                        _num(t.t_repex_over), _num(t.t_rp_over), _num(cycle_time(t)),
                        f"{row.wall:.6f}"])


def read_timing(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: (int(v) if k in ("cycle", "dim") else float(v)) for k, v in r.items()} for r in rows]


# -- samples ------------------------------------------------------------------

def sample_columns(ndims: int, ncoords: int) -> list[str]:
    return (["cycle", "replica"] + [f"k{d}" for d in range(ndims)] + ["frame"]
            + [f"x{c}" for c in range(ncoords)])


def write_samples(path, samples: Iterable[Sample], ndims: int, ncoords: int, append: bool = False) -> None:
    fh, w = _open_csv(path, sample_columns(ndims, ncoords), append)
    with fh:
        for s in samples:
            for f, frame in enumerate(np.atleast_2d(s.frames)):
                w.writerow([s.cycle, s.replica_id, *s.coords, f, *(_num(x) for x in frame)])


def read_samples(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (ladder index matrix, coordinate matrix), one row per frame."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise RunFileError(f"{path}: empty file")
        rows = list(reader)
    kcols = [i for i, h in enumerate(header) if h.startswith("k")]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    if not rows:
        return np.empty((0, len(kcols)), dtype=int), np.empty((0, len(xcols)))
    arr = np.array(rows, dtype=float)
    return arr[:, kcols].astype(int), arr[:, xcols]


# -- summary ------------------------------------------------------------------

def write_summary(path, values: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([values.get(c, "") for c in SUMMARY_COLUMNS])


def read_summary(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise RunFileError(f"{path}: no summary row")
    return rows[0]


# -- restart ------------------------------------------------------------------

def write_restart(path, *, pattern: str, seed: int, next_cycle: int, time: float, next_task_id: int,
                  replicas: Sequence[dict | ReplicaState]) -> None:
    data = {
        "format": RESTART_FORMAT,
        "pattern": pattern,
        "seed": seed,
        "next_cycle": next_cycle,
        "time": time,
        "next_task_id": next_task_id,
        "replicas": [r.to_dict() if isinstance(r, ReplicaState) else r for r in replicas],
    }
    Path(path).write_text(json.dumps(data, indent=1) + "\n", encoding="utf-8")


def read_restart(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise RunFileError(f"restart file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise RunFileError(f"{path} is not valid JSON: {exc}") from None
    fmt = data.get("format") if isinstance(data, dict) else None
    if fmt != RESTART_FORMAT:
        raise RunFileError(f"unsupported restart format {fmt!r} (this version reads {RESTART_FORMAT!r})")
    data["replicas"] = [ReplicaState.from_dict(r) for r in data["replicas"]]
    return data
