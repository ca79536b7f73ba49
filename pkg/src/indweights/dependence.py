"""Weighted energy statistics.

The weighted distance covariance between ``X`` and ``A`` is::

    V2(w) = (1/n^2) sum_{k,l} w_k w_l C_kl D_kl

with ``C`` and ``D`` the doubly-centered distance matrices, and the weighted
energy distance between the ``w``-weighted and unweighted empirical laws of a
sample with distance matrix ``d`` is::

    E(w) = (2/n^2) sum_ij w_i d_ij - (1/n^2) sum_ij w_i w_j d_ij - (1/n^2) sum_ij d_ij

The independence criterion adds both marginal energy distances to ``V2``,
optionally reweighting them so the covariate term gets ``sqrt(p)`` times the
exposure term's share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DistanceStructures, as_weights


@dataclass(frozen=True)
class CriterionValue:
    weighted_dcov: float
    energy_x: float
    energy_a: float
    total: float
    dim_adjusted: bool
    c_x: float
    c_a: float

    def to_dict(self, clamp: bool = True) -> dict:
        """JSON-ready mapping. ``clamp`` zeroes tiny negative roundoff for display."""

        def show(v):
            return 0.0 if clamp and -1e-10 < v < 0 else float(v)

        return {
            "weighted_dcov": show(self.weighted_dcov),
            "energy_x": show(self.energy_x),
            "energy_a": show(self.energy_a),
            "total": show(self.total),
            "c_x": float(self.c_x),
            "c_a": float(self.c_a),
        }


def dimension_coefficients(p: int, dim_adjust: bool = True) -> tuple:
    """Multipliers ``(c_x, c_a)`` of the covariate and exposure energy terms."""
    if not dim_adjust:
        return 1.0, 1.0
    if p < 1:
        raise ValueError("p must be a positive integer")
    root = math.sqrt(p)
    return root / (1.0 + root), 1.0 / (1.0 + root)


def weighted_dcov(ds: DistanceStructures, w) -> float:
    n = ds.n
    w = as_weights(w, n)
    return float(w @ (ds.centered_x * ds.centered_a) @ w) / n**2


def weighted_energy_distance(dist, w) -> float:
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    w = as_weights(w, n)
    dw = dist @ w
    return float(2.0 * dw.sum() - w @ dw - dist.sum()) / n**2


def criterion(
    ds: DistanceStructures,
    w,
    dim_adjust: bool = True,
    p: Optional[int] = None,
) -> CriterionValue:
    """Evaluate the (dimension-adjusted) independence criterion at ``w``.

    ``p`` defaults to the covariate dimension recorded in ``ds``.
    """
    c_x, c_a = dimension_coefficients(ds.p if p is None else p, dim_adjust)
    v2 = weighted_dcov(ds, w)
    ex = weighted_energy_distance(ds.dist_x, w)
    ea = weighted_energy_distance(ds.dist_a, w)
    return CriterionValue(
        weighted_dcov=v2,
        energy_x=ex,
        energy_a=ea,
        total=v2 + c_x * ex + c_a * ea,
        dim_adjusted=dim_adjust,
        c_x=c_x,
        c_a=c_a,
    )
