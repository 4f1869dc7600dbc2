"""
Where the cores go: synchronous vs asynchronous exchange
========================================================

On the virtual clock nothing is simulated, only scheduled, so we can study
64 replicas on 16 cores with heavy-tailed MD durations in a few seconds.
"""

import numpy as np

from repexkit import DimensionSpec, build_grid, build_ladder
from repexkit.engine import DoubleWell1D, MDSegment
from repexkit.pilot import DurationModel, FifoN, LogNormal, PilotSpec, TimeWindow, run_async, run_sync

dims = [DimensionSpec.from_values("temperature", build_ladder("temperature", 273, 373, 64))]
spec = PilotSpec(16, 1, durations=DurationModel(md=LogNormal.from_mean(10.0, 0.75)))
seg = MDSegment(1, 0.01)   # placeholder, virtual clock only

def mean_util(runner, seeds=range(10)):
    return np.mean([runner(s).utilization() for s in seeds])

sync = mean_util(lambda s: run_sync(build_grid(dims, [1.0], seed=s), spec, 10, DoubleWell1D(), seg, seed=s))
print(f"sync           {sync:6.2f} %")

# %%
# Smaller FIFO batches react faster but pair replicas from fewer candidates
for n in (2, 4, 8, 16, 32):
    u = mean_util(lambda s: run_async(build_grid(dims, [1.0], seed=s), spec, 10, FifoN(n),
                                      DoubleWell1D(), seg, seed=s))
    print(f"async FifoN({n:2d}) {u:6.2f} %")

u = mean_util(lambda s: run_async(build_grid(dims, [1.0], seed=s), spec, 10, TimeWindow(15.0),
                                  DoubleWell1D(), seg, seed=s))
print(f"async window   {u:6.2f} %")
