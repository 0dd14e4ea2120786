"""Greedy counts of a 3-d fBm lift and their Gaussian-type tail.

The number of pieces on which the rough-path norm reaches a threshold is
random; its tail log P(N > n) decays linearly in n^{2/q}.
"""

import numpy as np

from roughstab.gaussian_paths import FbmSpec
from roughstab.greedy import tail_counts, tail_regression

counts = tail_counts(FbmSpec(0.45, 3), 0.25, 2.5, 0.02, 0, range(500), 257)
rows, slope, intercept, r2, degenerate = tail_regression(counts, 1.25)
print("n  P(N > n)")
for n, c, prob in rows:
    print(f"{n:2d}  {prob:.4f}")
print(f"slope {slope:.3f}, R^2 {r2:.3f}, mean count {np.mean(counts):.2f}")
