"""Cycle time, scaling efficiencies and utilization."""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass
from typing import Iterable, Mapping


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class CycleTiming:
    """Components of one simulation cycle, in seconds.

    ``t_repex_over`` is framework time spent preparing tasks and
    ``t_rp_over`` the launch overhead of the pilot.
    """

    t_md: float = 0.0
    t_ex: float = 0.0
    t_data: float = 0.0
    t_repex_over: float = 0.0
    t_rp_over: float = 0.0

    def __post_init__(self):
        for name, value in zip(("t_md", "t_ex", "t_data", "t_repex_over", "t_rp_over"), astuple(self)):
            if not (math.isfinite(value) and value >= 0):
                raise MetricsError(f"invalid-timing: {name} = {value}")


def cycle_time(timing: CycleTiming) -> float:
    # For multi-dimensional runs a cycle exchanges in one dimension only, so
    # this is already the 1-D cycle time of the active dimension.
    return timing.t_md + timing.t_ex + timing.t_data + timing.t_repex_over + timing.t_rp_over


def weak_efficiency(t_1: float, t_n: float) -> float:
    """T_1 / T_N in percent; T_1 on the smallest replica count with matching cores."""
    if not (t_1 > 0 and t_n > 0):
        raise MetricsError(f"times must be > 0, got T_1={t_1}, T_N={t_n}")
    return t_1 / t_n * 100.0


def strong_efficiency(t_1: float, t_n: float, n: float) -> float:
    """T_1 / (N T_N) in percent, with N = M / N_min the core multiplication factor."""
    if not (t_1 > 0 and t_n > 0):
        raise MetricsError(f"times must be > 0, got T_1={t_1}, T_N={t_n}")
    if not n >= 1:
        raise MetricsError(f"core factor N must be >= 1, got {n}")
    return t_1 / (n * t_n) * 100.0


def utilization(run_log) -> float:
    """MD busy core-time over available core-time, in percent.

    The ideal rate U_max is what the cores would deliver doing nothing but
    MD. Simulated ns/day is proportional to MD busy time for a fixed engine
    speed, so the ratio of rates equals the busy fraction.

    ``run_log`` needs ``md_busy``, ``total_cores`` and ``makespan``
    attributes (or mapping keys).
    """
    get = run_log.get if isinstance(run_log, Mapping) else lambda k: getattr(run_log, k)
    busy, cores, span = get("md_busy"), get("total_cores"), get("makespan")
    if not span > 0:
        raise MetricsError("invalid: zero pilot span")
    if not cores > 0:
        raise MetricsError("invalid: pilot has no cores")
    return busy / (cores * span) * 100.0


def utilization_from_trace(events: Iterable[Mapping], total_cores: int) -> float:
    """Same quantity rebuilt from an event trace (successful MD ``end`` events carry ``work``)."""
    events = list(events)
    if not events:
        raise MetricsError("invalid: empty trace")
    busy = sum(e["work"] * e["cores"] for e in events
               if e["event"] == "end" and e.get("kind") == "md")
    t0 = min(e["t"] for e in events)
    t1 = max(e["t"] for e in events)
    return utilization({"md_busy": busy, "total_cores": total_cores, "makespan": t1 - t0})


def mean_cycle_time(timings: Iterable[CycleTiming]) -> float:
    values = [cycle_time(t) for t in timings]
    if not values:
        raise MetricsError("no-data: no cycles recorded")
    return sum(values) / len(values)
