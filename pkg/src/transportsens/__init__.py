"""Generalizing treatment effects from pooled studies to a target population.

The package estimates a weighted population average treatment effect from one
or more (conditionally randomized or observational) studies, quantifies its
sensitivity to unobserved effect modification, and provides hypothesis-testing
and simulation tools for detecting such violations.
"""

from transportsens._kernels import BACKEND
from transportsens.data import (
    ArmCounts,
    ColumnSchema,
    PooledDataset,
    UnitRecord,
    load_csv,
    summarize_smd,
    write_csv,
)
from transportsens.errors import (
    AlignmentError,
    ConvergenceError,
    DegenerateArmError,
    InconsistencyError,
    InsufficientDataError,
    OverlapError,
    PositivityError,
    ReliabilityError,
    SchemaError,
    SeparationError,
    SingularityError,
    TransportsensError,
    ValidationError,
)
from transportsens.estimators import (
    EstimateResult,
    PotentialOutcomeMoments,
    estimate_cov_w_tau,
    estimate_pate,
    estimate_pate_leave_one_out,
    estimate_pate_single_study,
    hajek_moments,
    pooled_trial_variance,
    potential_outcome_variances,
)
from transportsens.sensitivity import (
    BenchmarkRow,
    ContourGrid,
    SensitivityParams,
    SensitivitySummary,
    adjusted_estimate,
    benchmark_modifiers,
    bias_from_params,
    contour_grid,
    rho_bounds,
    robustness_value,
    robustness_value_from_bias,
    sigma2_tau_bound,
    summarize_sensitivity,
)
from transportsens.bootstrap import (
    AdjustedGrid,
    BootstrapPlan,
    BootstrapResult,
    EstimatorSpec,
    PercentileCI,
    adjusted_ci_grid,
    bootstrap_estimate,
    minimal_bias_threshold,
)
from transportsens.wald import (
    WaldInput,
    WaldResult,
    chi2_sf,
    contrast_matrix,
    wald_test,
)
from transportsens.weights import (
    FitDiagnostics,
    WeightSet,
    estimate_combination_weights,
    estimate_deconfounding_weights,
    estimate_generalization_weights,
    estimate_weights,
    leave_one_out_weights,
    write_weights_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "__version__",
    "ArmCounts",
    "ColumnSchema",
    "PooledDataset",
    "UnitRecord",
    "load_csv",
    "summarize_smd",
    "write_csv",
    "TransportsensError",
    "SchemaError",
    "ValidationError",
    "PositivityError",
    "SeparationError",
    "ConvergenceError",
    "AlignmentError",
    "DegenerateArmError",
    "InsufficientDataError",
    "InconsistencyError",
    "OverlapError",
    "ReliabilityError",
    "SingularityError",
    "FitDiagnostics",
    "WeightSet",
    "estimate_generalization_weights",
    "estimate_combination_weights",
    "estimate_deconfounding_weights",
    "estimate_weights",
    "leave_one_out_weights",
    "write_weights_csv",
    "EstimateResult",
    "PotentialOutcomeMoments",
    "estimate_pate",
    "estimate_pate_single_study",
    "estimate_pate_leave_one_out",
    "hajek_moments",
    "pooled_trial_variance",
    "potential_outcome_variances",
    "estimate_cov_w_tau",
    "SensitivityParams",
    "SensitivitySummary",
    "BenchmarkRow",
    "ContourGrid",
    "bias_from_params",
    "adjusted_estimate",
    "sigma2_tau_bound",
    "rho_bounds",
    "robustness_value",
    "robustness_value_from_bias",
    "summarize_sensitivity",
    "benchmark_modifiers",
    "contour_grid",
    "BootstrapPlan",
    "BootstrapResult",
    "PercentileCI",
    "EstimatorSpec",
    "AdjustedGrid",
    "bootstrap_estimate",
    "adjusted_ci_grid",
    "minimal_bias_threshold",
    "WaldInput",
    "WaldResult",
    "contrast_matrix",
    "wald_test",
    "chi2_sf",
]
