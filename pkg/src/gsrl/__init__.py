"""Run-length analysis of Shiryaev-Roberts-type change-point detection procedures.

The package solves the renewal-type integral equations governing the
pre-change run length of threshold detection rules driven by the recursion
``V_n = psi(V_{n-1}) * LR_n``: expected run length, second moment, survival
probabilities and conditional false-alarm risk, with a hat-basis collocation
discretization whose matrix entries are exact, a midpoint-rule baseline,
convergence diagnostics, threshold calibration and a Monte Carlo oracle.
"""

from .analysis import (
    CalibrationResult,
    ConvergenceReport,
    MethodComparison,
    build_matrix,
    calibrate_threshold,
    compare_methods,
    convergence_study,
    richardson_rate,
)
from .errors import (
    CalibrationError,
    GsrlError,
    NumericsError,
    RateUndefinedError,
    UndefinedConditionalError,
)
from .grid import HatBasis, Partition, Scheme, chebyshev_partition, partition_for, uniform_partition
from .kernel import (
    KernelMatrix,
    Method,
    assemble_collocation,
    assemble_midpoint,
    dump_matrix_csv,
    operator_rows,
)
from .model import ChangePointModel, Measure, PsiKind
from .oracle import MonteCarloEstimate, SimulationResult, martingale_residual, simulate_run_length
from .solver import (
    RunLengthSolution,
    SolutionKind,
    SurvivalSeries,
    Truncation,
    conditional_pfa,
    evaluate_iterated,
    pmf,
    run_length_std,
    solve_arl,
    solve_second_moment,
    survival_series,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "CalibrationResult",
    "ChangePointModel",
    "ConvergenceReport",
    "GsrlError",
    "HatBasis",
    "KernelMatrix",
    "Measure",
    "Method",
    "MethodComparison",
    "MonteCarloEstimate",
    "NumericsError",
    "Partition",
    "PsiKind",
    "RateUndefinedError",
    "RunLengthSolution",
    "Scheme",
    "SimulationResult",
    "SolutionKind",
    "SurvivalSeries",
    "Truncation",
    "UndefinedConditionalError",
    "assemble_collocation",
    "assemble_midpoint",
    "build_matrix",
    "calibrate_threshold",
    "chebyshev_partition",
    "compare_methods",
    "conditional_pfa",
    "convergence_study",
    "dump_matrix_csv",
    "evaluate_iterated",
    "martingale_residual",
    "operator_rows",
    "partition_for",
    "pmf",
    "richardson_rate",
    "run_length_std",
    "simulate_run_length",
    "solve_arl",
    "solve_second_moment",
    "survival_series",
    "uniform_partition",
    "__version__",
]
