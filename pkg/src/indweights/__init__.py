"""Independence weights for causal inference with continuous exposures."""

from .core import (
    DataError,
    Dataset,
    DistanceStructures,
    WeightVector,
    double_center,
    load_dataset,
    pairwise_distances,
)
from .dependence import CriterionValue, criterion, dimension_coefficients, weighted_dcov, weighted_energy_distance
from .diagnostics import (
    BalanceReport,
    balance_table,
    effective_sample_size,
    gps_normal_weights,
    stabilized_gps_ratios,
    weighted_correlation,
)
from .estimators import (
    ADRFEstimate,
    KernelSpec,
    NoLocalDataError,
    OutcomeModel,
    adrf_curve,
    default_bandwidth,
    default_grid,
    doubly_robust_estimate,
    fit_outcome_model,
    local_linear,
    nw_estimate,
    nw_stabilized,
    quantile_estimate,
    weighted_cdf,
)
from .inference import BootstrapConfig, BootstrapFailureError, BootstrapSummary, bootstrap_bands
from .simulation import DGPConfig, MetricResult, generate, kde, mab_irmse, oracle_bias_term, run_experiment
from .solver import (
    InfeasibleConstraintsError,
    MomentSpec,
    QPProblem,
    SolverConfig,
    WeightsResult,
    build_qp,
    independence_weights,
    solve_qp,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "DistanceStructures",
    "WeightVector",
    "double_center",
    "load_dataset",
    "pairwise_distances",
    "CriterionValue",
    "criterion",
    "dimension_coefficients",
    "weighted_dcov",
    "weighted_energy_distance",
    "BalanceReport",
    "balance_table",
    "effective_sample_size",
    "gps_normal_weights",
    "stabilized_gps_ratios",
    "weighted_correlation",
    "ADRFEstimate",
    "KernelSpec",
    "NoLocalDataError",
    "OutcomeModel",
    "adrf_curve",
    "default_bandwidth",
    "default_grid",
    "doubly_robust_estimate",
    "fit_outcome_model",
    "local_linear",
    "nw_estimate",
    "nw_stabilized",
    "quantile_estimate",
    "weighted_cdf",
    "BootstrapConfig",
    "BootstrapFailureError",
    "BootstrapSummary",
    "bootstrap_bands",
    "DGPConfig",
    "MetricResult",
    "generate",
    "kde",
    "mab_irmse",
    "oracle_bias_term",
    "run_experiment",
    "InfeasibleConstraintsError",
    "MomentSpec",
    "QPProblem",
    "SolverConfig",
    "WeightsResult",
    "build_qp",
    "independence_weights",
    "solve_qp",
]
