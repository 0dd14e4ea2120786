"""Solve y' = -y dt + sigma y dx along one fBm path and compare with exp(-t + sigma x_t)."""

import numpy as np

from roughstab.gaussian_paths import FbmSpec, TimeGrid, lift_piecewise_linear, sample_fbm
from roughstab.rde_solver import solve
from roughstab.systems import scalar_linear

system = scalar_linear(1.0, 0.5)
fine = lift_piecewise_linear(sample_fbm(FbmSpec(0.45), TimeGrid.uniform(0, 1, 4097), 3))
for stride in (64, 16, 4, 1):
    rp = fine.coarsen(stride)
    traj = solve(system.drift, system.diff, rp, [1.0])
    err = np.max(np.abs(traj.y - system.exact(rp.times, rp.x, [1.0])))
    print(f"{rp.n - 1:5d} steps  max error {err:.2e}")
