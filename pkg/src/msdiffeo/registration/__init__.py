"""Matching problems over velocity paths, their energies, gradients and optimisation."""
from .energy import energy, final_map, gradient, scale_tuple, trajectory, warped_source
from .optimize import LOG_COLUMNS, OptimizeResult, OptimizerConfig, optimize
from .problem import (
    FORMULATIONS,
    INTEGRAL_KERNEL,
    KERNEL_BUNDLE,
    SDP_COARSE_FIRST,
    SDP_COARSE_LAST,
    SIMULTANEOUS,
    SUM_OF_KERNELS,
    Control,
    EnergyBreakdown,
    MatchingProblem,
)
from .report import REPORT_COLUMNS, EquivalenceRow, equivalence_report, split_control
