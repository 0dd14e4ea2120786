"""Numerical rough-path toolkit for stability experiments.

Modules
-------
gaussian_paths
    fBm sampling, covariance kernels and level-2 lifts.
norms
    Grid p-variation, (p, sigma)-variation, Hölder and two-parameter seminorms.
rough_core
    Young and rough integrals, sewing and translation checks.
greedy
    Greedy-time partitions, subdivision and tail studies.
rde_solver
    Second-order scheme for rough differential equations and solution bounds.
stability_lab
    Polar decomposition, exponent sweeps, angular and Gronwall checks.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    DegenerateSpacingError,
    DivergenceError,
    DomainError,
    KernelNotPSDError,
    RoughStabError,
    StructuralError,
)
from .gaussian_paths import (  # noqa: E402
    CovKernel,
    FbmSpec,
    RoughPath,
    SamplePath,
    TimeGrid,
    fbm_kernel,
    lift_piecewise_linear,
    sample_fbm,
)
from .reports import InequalityReport  # noqa: E402

__all__ = [
    "CovKernel", "DegenerateSpacingError", "DivergenceError", "DomainError", "FbmSpec",
    "InequalityReport", "KernelNotPSDError", "RoughPath", "RoughStabError", "SamplePath",
    "StructuralError", "TimeGrid", "fbm_kernel", "lift_piecewise_linear", "sample_fbm",
]
