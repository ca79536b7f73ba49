"""Synthetic confounded data with a known dose-response curve, plus metrics.

The outcome model follows the expenditure-style construction: cubic
polynomials in the continuous covariates, indicator main effects and
indicator-by-covariate interactions, every coefficient switched on or off by a
Bernoulli(0.5) draw, all main effects centered at their sample mean, and the
exposure entering through

    f(a) = a/4 + 2 / (a/100 + 1/2)^3 - (a - 40)^2 / 100

optionally scaled by a sample-centered heterogeneity term ``1 + delta(X)``.
Because both centerings use the realized sample, the sample-average
dose-response equals ``f`` exactly.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .core import DataError, Dataset, WeightVector, as_weights, format_float
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

EXPOSURE_MAX = 80.0
EXPOSURE_CENTER = 40.0
EXPOSURE_SIGNAL = 7.0  # exposure shift per unit of the covariate index at strength 1
EXPOSURE_NOISE = 7.0
# Methods: name -> (weight method, estimator)
METHODS = {
    "uniform": ("uniform", "local_linear"),
    "uniform_dr": ("uniform", "doubly_robust"),
    "gps_normal": ("gps_normal", "local_linear"),
    "gps_normal_dr": ("gps_normal", "doubly_robust"),
    "dcow": ("dcow", "local_linear"),
    "dcow_dr": ("dcow", "doubly_robust"),
    "dcow_dm": ("dcow_dm", "local_linear"),
    "dcow_dm_dr": ("dcow_dm", "doubly_robust"),
}
EXCLUDE_FAILURE_SHARE = 0.75


def effect_curve(a):
    """The dose-response curve ``f``."""
    a = np.asarray(a, dtype=float)
    return a / 4.0 + 2.0 / (a / 100.0 + 0.5) ** 3 - (a - 40.0) ** 2 / 100.0


@dataclass(frozen=True)
class DGPConfig:
    n: int = 200
    p_continuous: int = 2
    p_binary: int = 4
    confounding_strength: float = 1.0
    effect_type: str = "constant"
    noise_sd: float = 1.0
    exposure_family: str = "normal"
    seed: int = 0
    outcome_form: str = "nonlinear"

    def __post_init__(self):
        if self.n < 20:
            raise ValueError("n must be >= 20")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if self.p_continuous < 0 or self.p_binary < 0 or self.p_continuous + self.p_binary < 1:
            raise ValueError("need at least one covariate")
        if self.effect_type not in ("constant", "heterogeneous"):
            raise ValueError(f"unknown effect_type {self.effect_type!r}")
        if self.exposure_family not in ("normal", "gamma"):
            raise ValueError(f"unknown exposure_family {self.exposure_family!r}")
        if self.outcome_form not in ("nonlinear", "linear"):
            raise ValueError(f"unknown outcome_form {self.outcome_form!r}")

    def replace(self, **changes) -> "DGPConfig":
        return DGPConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class _Coefficients:
    lin: np.ndarray  # (pc,)
    sq: np.ndarray
    cub: np.ndarray
    alpha: np.ndarray  # (pb, 2)
    eta_lin: np.ndarray  # (pb, 2, pc)
    eta_sq: np.ndarray
    het_lin: np.ndarray  # (pc,)
    het_eta: np.ndarray  # (pb, 2, pc)


def _draw_coefficients(config: DGPConfig, rng: np.random.Generator) -> _Coefficients:
    pc, pb = config.p_continuous, config.p_binary

    def u(half, shape):
        return rng.uniform(-half, half, size=shape) * rng.binomial(1, 0.5, size=shape)

    coefs = _Coefficients(
        lin=u(0.5, pc),
        sq=u(0.1, pc),
        cub=u(0.01, pc),
        alpha=u(10.0, (pb, 2)),
        eta_lin=u(0.5, (pb, 2, pc)),
        eta_sq=u(0.1, (pb, 2, pc)),
        het_lin=rng.uniform(-0.5, 0.5, size=pc),
        het_eta=u(0.5, (pb, 2, pc)),
    )
    if config.outcome_form == "linear":
        zero = np.zeros_like
        coefs = _Coefficients(
            lin=coefs.lin,
            sq=zero(coefs.sq),
            cub=zero(coefs.cub),
            alpha=coefs.alpha,
            eta_lin=zero(coefs.eta_lin),
            eta_sq=zero(coefs.eta_sq),
            het_lin=coefs.het_lin,
            het_eta=coefs.het_eta,
        )
    return coefs


@dataclass(frozen=True)
class Truth:
    """Known structure of one simulated sample.

    Calling the object gives the dose-response ``mu(a) = f(a)``;
    :meth:`conditional_mean` gives ``mu(x, a)`` with the sample's centering
    constants.
    """

    config: DGPConfig
    coefs: _Coefficients
    cont_means: np.ndarray
    ind_means: np.ndarray  # (pb,) share of ones per binary column
    main_mean: float
    delta_mean: float

    def __call__(self, a):
        return effect_curve(a)

    def _split(self, covariates):
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        pc = self.config.p_continuous
        return x[:, :pc], x[:, pc:]

    def main_effects(self, covariates) -> np.ndarray:
        xc, xb = self._split(covariates)
        c = self.coefs
        xt = xc - self.cont_means
        out = xc @ c.lin + (xt**2) @ c.sq + (xt**3) @ c.cub
        for j in range(xb.shape[1]):
            for k in (0, 1):
                ind = (xb[:, j] == k).astype(float)
                inner = c.alpha[j, k] + xc @ c.eta_lin[j, k] + (xt**2) @ c.eta_sq[j, k]
                out = out + inner * ind
        return out

    def delta(self, covariates) -> np.ndarray:
        """Sample-centered heterogeneity term (zero for a constant effect)."""
        xc, xb = self._split(covariates)
        if self.config.effect_type == "constant":
            return np.zeros(xc.shape[0])
        c = self.coefs
        xt = xc - self.cont_means
        out = xt @ c.het_lin
        for j in range(xb.shape[1]):
            for k in (0, 1):
                ind_t = (xb[:, j] == k).astype(float) - (self.ind_means[j] if k == 1 else 1 - self.ind_means[j])
                out = out + (xt @ c.het_eta[j, k]) * ind_t
        return out - self.delta_mean

    def conditional_mean(self, covariates, a0) -> np.ndarray:
        return self.main_effects(covariates) - self.main_mean + effect_curve(a0) * (1.0 + self.delta(covariates))


def _seed_rng(*keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def _exposure_index(xc: np.ndarray, xb: np.ndarray) -> np.ndarray:
    z = np.column_stack([(xc - 40.0) / 10.0, 2.0 * xb - 1.0])
    return z.sum(axis=1) / math.sqrt(z.shape[1])


def _draw_exposure(config: DGPConfig, index: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    s = config.confounding_strength
    if config.exposure_family == "normal":
        mean = EXPOSURE_CENTER + EXPOSURE_SIGNAL * s * index

        def draw(m):
            return m + EXPOSURE_NOISE * rng.standard_normal(m.shape[0])

    else:
        mean = np.clip(EXPOSURE_CENTER + EXPOSURE_SIGNAL * s * index, 5.0, 75.0)
        shape = 16.0

        def draw(m):
            return rng.gamma(shape, m / shape)

    a = draw(mean)
    for _ in range(1000):
        bad = (a <= 0) | (a > EXPOSURE_MAX)
        if not bad.any():
            break
        a[bad] = draw(mean[bad])
    return np.clip(a, 1e-3, EXPOSURE_MAX)


def generate(config: DGPConfig, replication: int = 0, draw: int = 0):
    """Draw one sample; returns ``(Dataset, Truth)``.

    Outcome-model coefficients depend on ``(config.seed, draw)`` only, so
    replications under one outcome-model draw share the model and differ in data.
    """
    coefs = _draw_coefficients(config, _seed_rng(config.seed, 0, draw))
    rng = _seed_rng(config.seed, 1, draw, replication)
    n, pc, pb = config.n, config.p_continuous, config.p_binary
    xc = 40.0 + 10.0 * rng.standard_normal((n, pc))
    xb = rng.binomial(1, 0.5, size=(n, pb)).astype(float)
    a = _draw_exposure(config, _exposure_index(xc, xb), rng)
    x = np.column_stack([xc, xb])

    truth = Truth(config, coefs, xc.mean(axis=0), xb.mean(axis=0), 0.0, 0.0)
    main = truth.main_effects(x)
    truth = Truth(config, coefs, truth.cont_means, truth.ind_means, float(main.mean()), 0.0)
    delta = truth.delta(x)
    truth = Truth(config, coefs, truth.cont_means, truth.ind_means, truth.main_mean, float(delta.mean()))

    eps = config.noise_sd * rng.standard_normal(n) if config.noise_sd > 0 else np.zeros(n)
    y = main - truth.main_mean + effect_curve(a) * (1.0 + truth.delta(x)) + eps
    names = tuple(f"c{j + 1}" for j in range(pc)) + tuple(f"b{j + 1}" for j in range(pb))
    return Dataset(x, a, y, names), truth


def oracle_bias_term(
    dataset: Dataset, w, a0: float, truth_mu_xa: Callable, kernel: Optional[KernelSpec] = None
) -> float:
    """Systematic-bias term ``(1/n) sum_i (w_i - 1) mu(X_i, a0)``.

    ``truth_mu_xa(covariates, a0)`` returns the per-unit conditional means.
    With ``kernel`` the weighted mean is localized at ``a0``, i.e. the
    weights become ``w_i K_h(A_i - a0)``; this is the covariate-imbalance
    bias of a weighted kernel estimator and is nonzero for uniform weights
    under confounding.
    """
    w = as_weights(w, dataset.n)
    mu = np.asarray(truth_mu_xa(dataset.covariates, a0), dtype=float)
    if kernel is None:
        return float(np.mean(w * mu) - np.mean(mu))
    local = w * kernel(dataset.exposure - a0)
    if local.sum() <= 0:
        raise NoLocalDataError(f"no weighted kernel mass at a0={a0}")
    return float(local @ mu / local.sum() - np.mean(mu))


def kde(a, grid) -> np.ndarray:
    """Gaussian kernel density estimate with Silverman's bandwidth."""
    a = np.asarray(a, dtype=float).ravel()
    grid = np.asarray(grid, dtype=float).ravel()
    h = default_bandwidth(a)
    t = (grid[:, None] - a[None, :]) / h
    return np.exp(-0.5 * t * t).mean(axis=1) / (h * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class MetricResult:
    mab: float
    irmse: float
    replications: int


def mab_irmse(curves, truth, density, grid) -> MetricResult:
    """Density-weighted mean absolute bias and integrated RMSE over ``grid``.

    ``curves`` is (replications x grid points); ``truth`` is a callable or an
    array on the grid. The density is renormalized to integrate to one on the
    grid (trapezoid rule).
    """
    curves = np.atleast_2d(np.asarray(curves, dtype=float))
    grid = np.asarray(grid, dtype=float).ravel()
    density = np.asarray(density, dtype=float).ravel()
    if curves.shape[1] != grid.size or density.size != grid.size:
        raise ValueError("curves, density and grid must share one grid")
    if grid.size < 2:
        raise ValueError("need at least two grid points")
    if curves.shape[0] < 1:
        raise ValueError("need at least one replication")
    mu = np.asarray(truth(grid) if callable(truth) else truth, dtype=float).ravel()
    dens = density / trapezoid(density, grid)
    err = curves - mu
    bias = np.abs(err.mean(axis=0))
    rmse = np.sqrt((err * err).mean(axis=0))
    return MetricResult(
        mab=float(trapezoid(bias * dens, grid)),
        irmse=float(trapezoid(rmse * dens, grid)),
        replications=int(curves.shape[0]),
    )


@dataclass
class MethodSummary:
    method: str
    n: int
    metrics: Optional[MetricResult]
    failures: int
    excluded: bool


@dataclass
class ExperimentResult:
    config: DGPConfig
    replications: int
    grid: np.ndarray
    density: np.ndarray
    rows: list
    curves: dict = field(default_factory=dict, repr=False)
    outcome_draws: int = 1

    def row(self, method: str) -> MethodSummary:
        return next(r for r in self.rows if r.method == method)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["method", "n", "mab", "irmse", "failures"])
        for r in self.rows:
            mab = "NA" if r.metrics is None else format_float(r.metrics.mab)
            irmse = "NA" if r.metrics is None else format_float(r.metrics.irmse)
            writer.writerow([r.method, r.n, mab, irmse, r.failures])
        return buf.getvalue()

    def config_json(self) -> str:
        return json.dumps(
            {**asdict(self.config), "replications": self.replications, "outcome_draws": self.outcome_draws},
            indent=2,
            sort_keys=True,
        )


def experiment_grid(config: DGPConfig, size: int = 50, pilot_n: int = 20000):
    """Fixed evaluation grid and exposure density from a large pilot draw."""
    rng = _seed_rng(config.seed, 2)
    pc, pb = config.p_continuous, config.p_binary
    xc = 40.0 + 10.0 * rng.standard_normal((pilot_n, pc))
    xb = rng.binomial(1, 0.5, size=(pilot_n, pb)).astype(float)
    a = _draw_exposure(config, _exposure_index(xc, xb), rng)
    grid = default_grid(a, size)
    return grid, kde(a, grid)


def compute_weights(
    dataset: Dataset, method: str, solver_config: Optional[SolverConfig] = None, standardize: bool = True
) -> WeightVector:
    """Weights by method name; raises on solver non-convergence.

    With ``standardize`` the distance-based methods see unit-variance
    covariates, so no column dominates the Euclidean distances by its units.
    """
    if method == "uniform":
        return WeightVector.uniform(dataset.n)
    if method == "gps_normal":
        return gps_normal_weights(dataset)
    if method in ("dcow", "dcow_dm"):
        spec = MomentSpec.first_order() if method == "dcow_dm" else None
        res = independence_weights(dataset.standardized() if standardize else dataset, solver_config, True, spec)
        if not res.converged:
            raise NonConvergenceError(f"{method}: solver did not converge in {res.iterations} iterations")
        return res.weights
    raise ValueError(f"unknown weight method {method!r}")


class NonConvergenceError(RuntimeError):
    pass


RECOVERABLE = (DataError, NoLocalDataError, InfeasibleConstraintsError, NonConvergenceError, np.linalg.LinAlgError)


def _one_replication(config, methods, draw, r, grid, solver_config):
    dataset, _ = generate(config, r, draw)
    kernel = KernelSpec("epanechnikov", default_bandwidth(dataset.exposure))
    cache: dict = {}
    out = {}
    for m in methods:
        weight_method, estimator = METHODS[m]
        try:
            if weight_method not in cache:
                try:
                    cache[weight_method] = compute_weights(dataset, weight_method, solver_config)
                except RECOVERABLE as exc:
                    cache[weight_method] = exc
            w = cache[weight_method]
            if isinstance(w, Exception):
                raise w
            model = fit_outcome_model(dataset) if estimator == "doubly_robust" else None
            est = adrf_curve(dataset, w, grid, kernel, estimator, model)
            out[m] = est.values if np.all(np.isfinite(est.values)) else None
        except RECOVERABLE as exc:
            logger.debug("replication %d, method %s failed: %s", r, m, exc)
            out[m] = None
    return out


def run_experiment(
    config: DGPConfig,
    methods: Sequence[str],
    replications: int,
    grid_size: int = 50,
    n_jobs: int = 1,
    solver_config: Optional[SolverConfig] = None,
    outcome_draws: int = 1,
) -> ExperimentResult:
    """Paired Monte-Carlo comparison of methods on one DGP configuration.

    Every method sees the same simulated samples. For each of
    ``outcome_draws`` outcome models, ``replications`` samples are drawn
    (replication ``r`` of draw ``d`` uses a stream keyed by ``(seed, d, r)``);
    metrics are computed per draw and averaged over draws. A method whose
    failure share exceeds 75% is reported without metrics.
    """
    methods = list(dict.fromkeys(methods))
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
    if replications < 1 or outcome_draws < 1:
        raise ValueError("replications and outcome_draws must be >= 1")
    grid, density = experiment_grid(config, grid_size)
    jobs = [(d, r) for d in range(outcome_draws) for r in range(replications)]

    def job(key):
        return _one_replication(config, methods, key[0], key[1], grid, solver_config)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(key) for key in jobs]

    total = len(jobs)
    rows, curves = [], {}
    for m in methods:
        per_draw = [
            [res[m] for (d, _), res in zip(jobs, results) if d == draw and res[m] is not None]
            for draw in range(outcome_draws)
        ]
        successes = sum(len(c) for c in per_draw)
        failures = total - successes
        excluded = failures > EXCLUDE_FAILURE_SHARE * total or any(not c for c in per_draw)
        metrics = None
        if not excluded:
            parts = [mab_irmse(np.array(c), effect_curve, density, grid) for c in per_draw]
            metrics = MetricResult(
                mab=float(np.mean([q.mab for q in parts])),
                irmse=float(np.mean([q.irmse for q in parts])),
                replications=successes,
            )
        curves[m] = [np.array(c) for c in per_draw]
        rows.append(MethodSummary(m, config.n, metrics, failures, excluded))
    return ExperimentResult(config, replications, grid, density, rows, curves, outcome_draws)
