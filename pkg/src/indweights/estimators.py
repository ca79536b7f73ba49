"""Weighted kernel estimators of the average dose-response function (ADRF).

All pointwise estimators share the kernel weights ``K_h(A_i - a0)``:

* ``nw``: weighted Nadaraya-Watson, weights in the numerator only.
* ``nw_stabilized``: ratio of weighted sums (a convex combination of ``Y``).
* ``local_linear``: intercept of a weighted least-squares line in ``A - a0``.
* ``doubly_robust``: outcome-model plug-in plus kernel-smoothed weighted
  residuals over the unweighted kernel mass.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import DataError, Dataset, as_weights, format_float

ESTIMATORS = ("nw", "nw_stabilized", "local_linear", "doubly_robust")
KERNELS = ("gaussian", "epanechnikov")


class NoLocalDataError(ValueError):
    """Kernel mass at the evaluation point is zero."""


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "epanechnikov"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; choose from {KERNELS}")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ValueError("bandwidth must be a positive finite number")

    def __call__(self, u) -> np.ndarray:
        """Scaled kernel ``K_h(u) = K(u / h) / h``."""
        t = np.asarray(u, dtype=float) / self.bandwidth
        if self.kind == "gaussian":
            k = np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
        else:
            k = np.where(np.abs(t) <= 1.0, 0.75 * (1.0 - t * t), 0.0)
        return k / self.bandwidth


@dataclass(frozen=True)
class OutcomeModel:
    """Linear outcome regression ``mu(x, a) = b0 + sum_k b_k a^k + x' beta``."""

    intercept: float
    exposure_coefs: np.ndarray
    covariate_coefs: np.ndarray
    warnings: tuple = ()

    def predict(self, covariates, a0) -> np.ndarray:
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        a0 = float(a0)
        trend = sum(c * a0 ** (k + 1) for k, c in enumerate(self.exposure_coefs))
        return self.intercept + trend + x @ self.covariate_coefs


@dataclass
class ADRFEstimate:
    grid: np.ndarray
    values: np.ndarray
    estimator: str
    kernel: KernelSpec
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)
    bootstrap: Optional[object] = None

    def to_csv(self) -> str:
        cols = ["a0", "estimate"]
        data = [self.grid, self.values]
        if self.lower is not None and self.upper is not None:
            cols += ["lower", "upper"]
            data += [self.lower, self.upper]
        lines = [",".join(cols)]
        for row in zip(*data):
            lines.append(",".join(format_float(v) for v in row))
        return "\n".join(lines) + "\n"


def _kernel_weights(dataset: Dataset, a0: float, kernel: KernelSpec) -> np.ndarray:
    return kernel(dataset.exposure - a0)


def nw_estimate(dataset: Dataset, w, a0: float, kernel: KernelSpec) -> float:
    y = dataset.require_outcome()
    w = as_weights(w, dataset.n)
    k = _kernel_weights(dataset, a0, kernel)
    mass = k.sum()
    if not mass > 0:
        raise NoLocalDataError(f"no local data at a0={a0}")
    return float(np.sum(y * w * k) / mass)


def nw_stabilized(dataset: Dataset, w, a0: float, kernel: KernelSpec) -> float:
    y = dataset.require_outcome()
    wk = as_weights(w, dataset.n) * _kernel_weights(dataset, a0, kernel)
    mass = wk.sum()
    if not mass > 0:
        raise NoLocalDataError(f"no weighted local data at a0={a0}")
    est = float(np.sum(y * wk) / mass)
    # a convex combination; clamp roundoff so the range guarantee is exact
    return min(max(est, float(y.min())), float(y.max()))


def local_linear(dataset: Dataset, w, a0: float, kernel: KernelSpec) -> float:
    """Weighted local linear fit at ``a0``; falls back to ``nw_stabilized`` when singular."""
    y = dataset.require_outcome()
    wk = as_weights(w, dataset.n) * _kernel_weights(dataset, a0, kernel)
    if not wk.sum() > 0:
        raise NoLocalDataError(f"no weighted local data at a0={a0}")
    d = dataset.exposure - a0
    s0, s1, s2 = wk.sum(), wk @ d, wk @ (d * d)
    t0, t1 = wk @ y, wk @ (d * y)
    gram = np.array([[s0, s1], [s1, s2]])
    if np.linalg.cond(gram) > 1e10:
        return nw_stabilized(dataset, w, a0, kernel)
    return float(np.linalg.solve(gram, np.array([t0, t1]))[0])


def doubly_robust_estimate(
    dataset: Dataset,
    w,
    a0: float,
    kernel: KernelSpec,
    model: OutcomeModel,
    warnings: Optional[list] = None,
) -> float:
    y = dataset.require_outcome()
    w = as_weights(w, dataset.n)
    mu_hat = model.predict(dataset.covariates, a0)
    plug_in = float(mu_hat.mean())
    k = _kernel_weights(dataset, a0, kernel)
    mass = k.sum()
    if not mass > 0:
        msg = f"no local data at a0={a0}; doubly-robust estimate uses the outcome model only"
        if warnings is not None:
            warnings.append(msg)
        else:
            _warnings.warn(msg, RuntimeWarning, stacklevel=2)
        return plug_in
    return plug_in + float(np.sum((y - mu_hat) * w * k) / mass)


def fit_outcome_model(dataset: Dataset, exposure_degree: int = 1) -> OutcomeModel:
    """OLS of ``Y`` on ``[1, A, ..., A^degree, X]``."""
    y = dataset.require_outcome()
    if exposure_degree < 0:
        raise ValueError("exposure_degree must be >= 0")
    a = dataset.exposure
    design = np.column_stack(
        [np.ones(dataset.n)] + [a ** (k + 1) for k in range(exposure_degree)] + [dataset.covariates]
    )
    notes = []
    if dataset.n <= design.shape[1]:
        notes.append(f"n={dataset.n} does not exceed the {design.shape[1]} regression columns")
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        notes.append(f"rank-deficient outcome design (rank {rank} of {design.shape[1]}); minimum-norm fit")
    for msg in notes:
        _warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return OutcomeModel(
        intercept=float(coef[0]),
        exposure_coefs=coef[1 : 1 + exposure_degree].copy(),
        covariate_coefs=coef[1 + exposure_degree :].copy(),
        warnings=tuple(notes),
    )


def weighted_cdf(dataset: Dataset, w, y: float, a0: float, kernel: KernelSpec) -> float:
    outcome = dataset.require_outcome()
    w = as_weights(w, dataset.n)
    k = _kernel_weights(dataset, a0, kernel)
    mass = k.sum()
    if not mass > 0:
        raise NoLocalDataError(f"no local data at a0={a0}")
    return float(np.sum((outcome <= y) * w * k) / mass)


def quantile_estimate(dataset: Dataset, w, alpha: float, a0: float, kernel: KernelSpec) -> float:
    """Smallest observed outcome whose weighted CDF reaches ``alpha`` (max Y if none)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    outcome = dataset.require_outcome()
    w = as_weights(w, dataset.n)
    k = _kernel_weights(dataset, a0, kernel)
    mass = k.sum()
    if not mass > 0:
        raise NoLocalDataError(f"no local data at a0={a0}")
    order = np.argsort(outcome, kind="stable")
    ys = outcome[order]
    cdf = np.cumsum((w * k)[order]) / mass
    # ties: the CDF at a value includes every unit with that value
    last = np.r_[ys[1:] != ys[:-1], True]
    ys, cdf = ys[last], cdf[last]
    hit = np.flatnonzero(cdf >= alpha)
    return float(ys[hit[0]] if hit.size else ys[-1])


def default_bandwidth(a) -> float:
    """Silverman's rule ``1.06 min(sd, IQR/1.34) n^(-1/5)``."""
    a = np.asarray(a, dtype=float).ravel()
    n = a.shape[0]
    if n < 2:
        raise ValueError("need at least 2 exposure values")
    sd = a.std(ddof=1)
    if not sd > 0:
        raise DataError("exposure is constant; no bandwidth can be chosen")
    q75, q25 = np.percentile(a, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd
    return 1.06 * spread * n ** (-0.2)


def default_grid(a, size: int = 50) -> np.ndarray:
    """``size`` equally spaced points between the 5th and 95th exposure percentiles."""
    lo, hi = np.percentile(np.asarray(a, dtype=float), [5, 95])
    if not hi > lo:
        raise DataError("exposure percentiles coincide; cannot build a grid")
    return np.linspace(lo, hi, size)


def adrf_curve(
    dataset: Dataset,
    w,
    grid: Optional[Sequence[float]] = None,
    kernel: Optional[KernelSpec] = None,
    estimator: str = "local_linear",
    model: Optional[OutcomeModel] = None,
) -> ADRFEstimate:
    """Evaluate a pointwise ADRF estimator over a grid.

    ``grid`` defaults to :func:`default_grid`, ``kernel`` to an Epanechnikov
    kernel with :func:`default_bandwidth`. The doubly-robust estimator fits a
    first-order outcome model when none is supplied.
    """
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; choose from {ESTIMATORS}")
    dataset.require_outcome()
    grid = default_grid(dataset.exposure) if grid is None else np.asarray(grid, dtype=float).ravel()
    if grid.size == 0 or (grid.size > 1 and np.any(np.diff(grid) <= 0)):
        raise ValueError("grid must be non-empty and strictly increasing")
    kernel = kernel or KernelSpec("epanechnikov", default_bandwidth(dataset.exposure))
    notes: list = []
    if estimator == "doubly_robust":
        if model is None:
            with _warnings.catch_warnings(record=True) as caught:
                _warnings.simplefilter("always")
                model = fit_outcome_model(dataset)
            notes.extend(str(c.message) for c in caught)
        values = [doubly_robust_estimate(dataset, w, a0, kernel, model, notes) for a0 in grid]
    else:
        fn = {"nw": nw_estimate, "nw_stabilized": nw_stabilized, "local_linear": local_linear}[estimator]
        values = [fn(dataset, w, a0, kernel) for a0 in grid]
    return ADRFEstimate(grid=grid, values=np.array(values), estimator=estimator, kernel=kernel, warnings=notes)
