"""Simulation and coupled-path experiments for the degenerate triangular
SDE chain dX = Y dt, dY = Z dt, dZ = |X|^alpha dB (and its 2-d analogue),
with the band stopping machinery and pathwise inequality checks used in
strong-uniqueness experiments.
"""

from .analysis import (
    BoundRecord,
    ConvergenceResult,
    ExcursionStats,
    InvariantReport,
    check_apriori_bound,
    check_case_bounds,
    convergence_order,
    evaluate_case_bounds,
    excursion_scan,
)
from .config import ExperimentConfig
from .core import ChainState, SystemParams, diffusion_coeff, drift_flow, mvt_bound
from .coupling import (
    CoupledRun,
    DivergenceTrace,
    InitJitter,
    KernelCheck,
    ResolutionSplit,
    SchemeSplit,
    coupled_ensemble,
    coupled_solve,
    estimate_divergence,
    gronwall_kernel_check,
)
from .errors import ChainSDEError, ConfigError, ResourceLimitError
from .integrator import (
    EnsembleResult,
    Scheme,
    SolveConfig,
    StopReason,
    Trajectory,
    linf_norm,
    solve,
    solve_ensemble,
    step,
)
from .noise import (
    BrownianPath,
    at_level,
    coarsen,
    generate,
    load_path,
    path_seed,
    refine,
    save_path,
    value_at,
)
from .stopping import CaseKind, CaseLabel, StoppingBand, classify, detect_Tn, guaranteed_window

__version__ = "0.1.0"

__all__ = [
    "BoundRecord",
    "BrownianPath",
    "CaseKind",
    "CaseLabel",
    "ChainSDEError",
    "ChainState",
    "ConfigError",
    "ConvergenceResult",
    "CoupledRun",
    "DivergenceTrace",
    "EnsembleResult",
    "ExcursionStats",
    "ExperimentConfig",
    "InitJitter",
    "InvariantReport",
    "KernelCheck",
    "ResolutionSplit",
    "ResourceLimitError",
    "Scheme",
    "SchemeSplit",
    "SolveConfig",
    "StopReason",
    "StoppingBand",
    "SystemParams",
    "Trajectory",
    "at_level",
    "check_apriori_bound",
    "check_case_bounds",
    "classify",
    "coarsen",
    "convergence_order",
    "coupled_ensemble",
    "coupled_solve",
    "detect_Tn",
    "diffusion_coeff",
    "drift_flow",
    "estimate_divergence",
    "evaluate_case_bounds",
    "excursion_scan",
    "generate",
    "gronwall_kernel_check",
    "guaranteed_window",
    "linf_norm",
    "load_path",
    "mvt_bound",
    "path_seed",
    "refine",
    "save_path",
    "solve",
    "solve_ensemble",
    "step",
    "value_at",
]
