"""Balance diagnostics and the stabilized normal-GPS comparator weights."""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
from scipy import stats

from .core import DataError, Dataset, DistanceStructures, WeightVector, as_weights, pairwise_distances
from .dependence import CriterionValue, criterion


def effective_sample_size(w) -> float:
    """Kish effective sample size ``(sum w)^2 / sum w^2``."""
    w = as_weights(w)
    return float(w.sum() ** 2 / np.dot(w, w))


def _weighted_moments(v: np.ndarray, p: np.ndarray):
    m = p @ v
    c = v - m
    return c, p @ (c * c)


def _is_degenerate(var: float, v: np.ndarray) -> bool:
    scale = float(np.max(np.abs(v))) if v.size else 0.0
    return not var > (1e-10 * max(scale, 1e-300)) ** 2


def weighted_correlation(x, a, w) -> float:
    """Weighted Pearson correlation with weights ``w / sum(w)``."""
    x = np.asarray(x, dtype=float).ravel()
    a = np.asarray(a, dtype=float).ravel()
    w = as_weights(w, x.shape[0])
    p = w / w.sum()
    cx, vx = _weighted_moments(x, p)
    ca, va = _weighted_moments(a, p)
    if _is_degenerate(vx, x) or _is_degenerate(va, a):
        raise DataError("degenerate column: zero weighted variance")
    r = float(p @ (cx * ca) / np.sqrt(vx * va))
    return max(-1.0, min(1.0, r))


def is_indicator(column) -> bool:
    column = np.asarray(column)
    return bool(np.all((column == 0) | (column == 1)))


def balance_features(covariates, max_covariate_power: int = 5, include_interactions: bool = True):
    """Covariate features for the balance table, as ``(names, matrix)``.

    Continuous columns are standardized with unweighted moments before being
    raised to powers ``1..max_covariate_power``; 0/1 indicator columns enter at
    power 1 only and unscaled. Interactions are products of distinct base columns.
    """
    x = np.asarray(covariates, dtype=float)
    base, names, feats = [], [], []
    for j in range(x.shape[1]):
        col = x[:, j]
        if is_indicator(col):
            base.append(col)
            names.append(f"x{j + 1}")
            feats.append(col)
            continue
        sd = col.std()
        z = (col - col.mean()) / sd if sd > 0 else col - col.mean()
        base.append(z)
        for k in range(1, max_covariate_power + 1):
            names.append(f"x{j + 1}^{k}" if k > 1 else f"x{j + 1}")
            feats.append(z**k)
    if include_interactions:
        for j, k in combinations(range(x.shape[1]), 2):
            names.append(f"x{j + 1}*x{k + 1}")
            feats.append(base[j] * base[k])
    return names, np.column_stack(feats) if feats else np.empty((x.shape[0], 0))


def exposure_features(a, max_exposure_power: int = 5) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    sd = a.std()
    z = (a - a.mean()) / sd if sd > 0 else a - a.mean()
    return np.column_stack([z**k for k in range(1, max_exposure_power + 1)])


@dataclass(frozen=True)
class BalanceReport:
    ess: float
    criterion: CriterionValue
    corr_mean: float
    corr_sd: float
    corr_median: float
    corr_p95: float
    corr_max: float
    n_pairs: int
    n_skipped: int = 0
    criterion_unadjusted: Optional[CriterionValue] = None

    def to_dict(self) -> dict:
        out = {
            "ess": self.ess,
            "criterion": self.criterion.to_dict(),
            "corr_mean": self.corr_mean,
            "corr_sd": self.corr_sd,
            "corr_median": self.corr_median,
            "corr_p95": self.corr_p95,
            "corr_max": self.corr_max,
            "n_pairs": self.n_pairs,
            "n_skipped": self.n_skipped,
        }
        if self.criterion_unadjusted is not None:
            out["criterion_unadjusted"] = self.criterion_unadjusted.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self, label: str = "weights") -> str:
        """Fixed-width text table, one statistic per row."""
        crit = self.criterion.to_dict()
        rows = [("criterion", crit["total"])]
        if self.criterion_unadjusted is not None:
            rows.append(("criterion (unadjusted)", self.criterion_unadjusted.to_dict()["total"]))
        rows += [
            ("V2 (weighted dcov)", crit["weighted_dcov"]),
            ("E_A", crit["energy_a"]),
            ("E_X", crit["energy_x"]),
            ("ESS", self.ess),
            ("mean(|Corr|)", self.corr_mean),
            ("sd(|Corr|)", self.corr_sd),
            ("median(|Corr|)", self.corr_median),
            ("95-pctl(|Corr|)", self.corr_p95),
            ("max(|Corr|)", self.corr_max),
        ]
        lines = [f"{'statistic':<24}{label:>16}"]
        for name, value in rows:
            text = f"{value:.1f}" if name == "ESS" else f"{value:.6f}"
            lines.append(f"{name:<24}{text:>16}")
        lines.append(f"{'correlation pairs':<24}{self.n_pairs:>16d}")
        if self.n_skipped:
            lines.append(f"{'skipped features':<24}{self.n_skipped:>16d}")
        return "\n".join(lines) + "\n"


def balance_table(
    dataset: Dataset,
    w,
    max_exposure_power: int = 5,
    include_interactions: bool = True,
    max_covariate_power: int = 5,
    dim_adjust: bool = True,
    ds: Optional[DistanceStructures] = None,
) -> BalanceReport:
    """Summaries of ``|weighted corr|`` between covariate features and exposure powers."""
    w = as_weights(w, dataset.n)
    ds = ds or pairwise_distances(dataset)
    _, feats = balance_features(dataset.covariates, max_covariate_power, include_interactions)
    expo = exposure_features(dataset.exposure, max_exposure_power)
    p = w / w.sum()

    def centered(m):
        c = m - p @ m
        var = p @ (c * c)
        scale = np.max(np.abs(m), axis=0)
        ok = var > (1e-10 * np.maximum(scale, 1e-300)) ** 2
        return c, var, ok

    cf, vf, okf = centered(feats)
    ce, ve, oke = centered(expo)
    cf, vf = cf[:, okf], vf[okf]
    ce, ve = ce[:, oke], ve[oke]
    n_skipped = int((~okf).sum() + (~oke).sum())
    corr = np.abs((cf * p[:, None]).T @ ce / np.sqrt(np.outer(vf, ve)))
    corr = np.minimum(corr, 1.0).ravel()
    if corr.size == 0:
        raise DataError("no non-degenerate features for the balance table")
    return BalanceReport(
        ess=effective_sample_size(w),
        criterion=criterion(ds, w, dim_adjust, dataset.p),
        corr_mean=float(corr.mean()),
        corr_sd=float(corr.std(ddof=1)) if corr.size > 1 else 0.0,
        corr_median=float(np.median(corr)),
        corr_p95=float(np.percentile(corr, 95)),
        corr_max=float(corr.max()),
        n_pairs=int(corr.size),
        n_skipped=n_skipped,
        criterion_unadjusted=criterion(ds, w, False, dataset.p) if dim_adjust else None,
    )


def stabilized_gps_ratios(dataset: Dataset) -> np.ndarray:
    """Raw ratios ``f_A(A_i) / f_{A|X}(A_i | X_i)`` under normal models.

    The conditional model is OLS of ``A`` on ``X`` with normal residuals; the
    marginal is normal with the sample mean and variance of ``A``.
    """
    n, p = dataset.n, dataset.p
    if n <= p + 2:
        raise DataError(f"normal GPS model needs n > p + 2 (n={n}, p={p})")
    a = dataset.exposure
    design = np.column_stack([np.ones(n), dataset.covariates])
    coef, _, rank, _ = np.linalg.lstsq(design, a, rcond=None)
    fitted = design @ coef
    resid_var = float(np.sum((a - fitted) ** 2) / (n - rank))
    if not resid_var > 1e-12 * max(a.var(), 1e-300):
        raise DataError("deterministic exposure model: residual variance is zero")
    marginal = stats.norm.logpdf(a, loc=a.mean(), scale=a.std(ddof=1))
    conditional = stats.norm.logpdf(a, loc=fitted, scale=np.sqrt(resid_var))
    return np.exp(marginal - conditional)


def gps_normal_weights(dataset: Dataset, truncate_at: float = 500.0) -> WeightVector:
    """Stabilized normal-GPS weights, scaled to sum ``n`` and truncated at ``truncate_at``."""
    raw = stabilized_gps_ratios(dataset)
    w = raw * (dataset.n / raw.sum())
    w = np.minimum(w, truncate_at)
    return WeightVector.normalized(w, "gps-normal")
