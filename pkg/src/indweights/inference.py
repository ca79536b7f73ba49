"""Nonparametric bootstrap pointwise bands for ADRF curves.

Each replication resamples units with replacement, re-estimates the weights on
the resample and re-evaluates the curve on the original grid with the original
bandwidth. Bands are percentile intervals over the successful replications.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DataError, Dataset, WeightVector
from .diagnostics import gps_normal_weights
from .estimators import (
    KernelSpec,
    NoLocalDataError,
    adrf_curve,
    default_bandwidth,
    default_grid,
    fit_outcome_model,
)
from .solver import InfeasibleConstraintsError, MomentSpec, SolverConfig, independence_weights

logger = logging.getLogger(__name__)

WEIGHT_METHODS = ("dcow", "gps_normal", "uniform")


class BootstrapFailureError(RuntimeError):
    """Too many bootstrap replications failed."""

    def __init__(self, failures: int, replications: int, max_failures: int):
        super().__init__(f"{failures} of {replications} bootstrap replications failed (max_failures={max_failures})")
        self.failures = failures
        self.replications = replications
        self.max_failures = max_failures


@dataclass(frozen=True)
class BootstrapConfig:
    replications: int = 200
    alpha: float = 0.05
    seed: int = 0
    max_failures: Optional[int] = None  # None: up to half of the replications

    def __post_init__(self):
        if self.replications < 10:
            raise ValueError("replications must be >= 10")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_failures is not None and self.max_failures < 0:
            raise ValueError("max_failures must be >= 0")

    @property
    def failure_limit(self) -> int:
        return self.replications // 2 if self.max_failures is None else self.max_failures


@dataclass(frozen=True)
class BootstrapSummary:
    replications: int
    failures: int
    alpha: float
    seed: int
    failure_reasons: dict = field(default_factory=dict)
    weight_method: str = "dcow"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _weights(dataset: Dataset, method: str, solver_config, dim_adjust, moment_constraints) -> WeightVector:
    if method == "uniform":
        return WeightVector.uniform(dataset.n)
    if method == "gps_normal":
        return gps_normal_weights(dataset)
    res = independence_weights(dataset, solver_config, dim_adjust, moment_constraints)
    if not res.converged:
        raise _NotConverged(f"solver stopped after {res.iterations} iterations")
    return res.weights


class _NotConverged(RuntimeError):
    pass


_REASONS = (
    (_NotConverged, "non_convergence"),
    (NoLocalDataError, "no_local_data"),
    (InfeasibleConstraintsError, "infeasible_constraints"),
    (DataError, "data_error"),
    (np.linalg.LinAlgError, "linear_algebra"),
)


def _replicate(dataset, r, config, method, estimator, grid, kernel, solver_config, dim_adjust, moments):
    """Curve for replication ``r``, or a failure reason string."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, r]))
    idx = rng.integers(0, dataset.n, size=dataset.n)
    try:
        sample = dataset.subset(idx)
        w = _weights(sample, method, solver_config, dim_adjust, moments)
        model = fit_outcome_model(sample) if estimator == "doubly_robust" else None
        values = adrf_curve(sample, w, grid, kernel, estimator, model).values
    except Exception as exc:  # noqa: BLE001 - classified below, everything else propagates
        for kind, reason in _REASONS:
            if isinstance(exc, kind):
                logger.debug("bootstrap replication %d failed: %s", r, exc)
                return reason
        raise
    if not np.all(np.isfinite(values)):
        return "non_finite"
    return values


def bootstrap_bands(
    dataset: Dataset,
    weight_method: str = "dcow",
    estimator: str = "local_linear",
    grid: Optional[Sequence[float]] = None,
    kernel: Optional[KernelSpec] = None,
    config: Optional[BootstrapConfig] = None,
    solver_config: Optional[SolverConfig] = None,
    dim_adjust: bool = True,
    moment_constraints: Optional[MomentSpec] = None,
    threads: int = 1,
    point_weights=None,
):
    """Point estimate on the full data plus percentile bootstrap bands.

    Returns an :class:`ADRFEstimate` whose ``bootstrap`` attribute is a
    :class:`BootstrapSummary`. ``point_weights`` skips re-estimating the
    full-data weights when they are already known. Results do not depend on
    ``threads``: replication ``r`` draws from a stream keyed by ``(seed, r)``.
    """
    if weight_method not in WEIGHT_METHODS:
        raise ValueError(f"unknown weight method {weight_method!r}; choose from {WEIGHT_METHODS}")
    dataset.require_outcome()
    config = config or BootstrapConfig()
    grid = default_grid(dataset.exposure) if grid is None else np.asarray(grid, dtype=float).ravel()
    kernel = kernel or KernelSpec("epanechnikov", default_bandwidth(dataset.exposure))

    if point_weights is None:
        point_weights = _weights(dataset, weight_method, solver_config, dim_adjust, moment_constraints)
    model = fit_outcome_model(dataset) if estimator == "doubly_robust" else None
    point = adrf_curve(dataset, point_weights, grid, kernel, estimator, model)

    def job(r):
        return _replicate(
            dataset, r, config, weight_method, estimator, grid, kernel, solver_config, dim_adjust, moment_constraints
        )

    reps = range(config.replications)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(job, reps))
    else:
        outcomes = [job(r) for r in reps]

    curves = [o for o in outcomes if not isinstance(o, str)]
    reasons: dict = {}
    for o in outcomes:
        if isinstance(o, str):
            reasons[o] = reasons.get(o, 0) + 1
    failures = config.replications - len(curves)
    if failures > config.failure_limit or not curves:
        raise BootstrapFailureError(failures, config.replications, config.failure_limit)
    stack = np.vstack(curves)
    lower, upper = np.quantile(stack, [config.alpha / 2, 1 - config.alpha / 2], axis=0)
    point.lower, point.upper = lower, upper
    point.bootstrap = BootstrapSummary(
        replications=config.replications,
        failures=failures,
        alpha=config.alpha,
        seed=config.seed,
        failure_reasons=dict(sorted(reasons.items())),
        weight_method=weight_method,
    )
    if failures:
        point.warnings.append(f"{failures} of {config.replications} bootstrap replications failed and were excluded")
    return point
