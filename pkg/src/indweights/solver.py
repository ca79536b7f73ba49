"""Quadratic program for distance covariance optimal weights.

The criterion is a quadratic in ``w``::

    D_c(w) + (lam/n^2) |w|^2 = w' P w + q' w + offset

    P = C o D / n^2 - c_x Q_X / n^2 - c_a Q_A / n^2 + lam I / n^2
    q = (2/n^2) (c_x Q_X 1 + c_a Q_A 1)

minimized over ``{w >= 0, E w = b}`` where ``E`` always holds the row of ones
(sum to ``n``) and optionally exact moment-decorrelation rows.

``P`` is indefinite on R^n, but restricted to ``{v : 1'v = 0}`` it is positive
semidefinite (``C o D`` is a Schur product of PSD matrices, and negated distance
matrices are conditionally positive definite). The solver therefore works in an
orthonormal basis of the null space of ``E``, where each ADMM x-update is a
diagonal solve and the penalty ``rho`` can adapt without refactorization.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .core import Dataset, DistanceStructures, WeightVector, pairwise_distances
from .dependence import CriterionValue, criterion, dimension_coefficients
from .diagnostics import effective_sample_size

logger = logging.getLogger(__name__)

MAX_MOMENT_POWER = 5


class InfeasibleConstraintsError(ValueError):
    """The equality constraints admit no solution."""


@dataclass(frozen=True)
class SolverConfig:
    """Penalty and ADMM controls.

    ``seed`` is carried for interface stability; the solver itself is fully
    deterministic and draws no random numbers.
    """

    lam: float = 0.0
    max_iterations: int = 50000
    primal_tolerance: float = 1e-6
    dual_tolerance: float = 1e-6
    admm_rho: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.primal_tolerance > 0 and self.dual_tolerance > 0):
            raise ValueError("tolerances must be > 0")
        if not self.admm_rho > 0:
            raise ValueError("admm_rho must be > 0")


@dataclass(frozen=True)
class MomentSpec:
    """Moments to decorrelate exactly.

    ``covariate_moments`` holds one tuple of powers per covariate column
    (``None`` means first order for every column). Each covariate moment is
    paired with each exposure moment. With ``preserve_means`` the weighted
    means of all listed moments are also pinned to their unweighted means, which
    makes the weighted Pearson correlations exactly zero rather than only the
    cross moments about the unweighted means.
    """

    covariate_moments: Optional[tuple] = None
    exposure_moments: tuple = (1,)
    preserve_means: bool = True

    def __post_init__(self):
        powers = list(self.exposure_moments)
        for col in self.covariate_moments or ():
            powers.extend(col)
        for k in powers:
            if int(k) != k or not 1 <= k <= MAX_MOMENT_POWER:
                raise ValueError(f"moment powers must be integers in 1..{MAX_MOMENT_POWER}, got {k}")

    @classmethod
    def first_order(cls) -> "MomentSpec":
        return cls()

    def constraint_rows(self, dataset: Dataset) -> np.ndarray:
        """Homogeneous constraint rows ``R`` with ``R w = 0`` (one row per moment pair)."""
        x, a = dataset.covariates, dataset.exposure
        cov = self.covariate_moments
        if cov is None:
            cov = tuple((1,) for _ in range(dataset.p))
        if len(cov) != dataset.p:
            raise ValueError(f"covariate_moments has {len(cov)} entries for {dataset.p} columns")
        mx = [x[:, j] ** k for j, powers in enumerate(cov) for k in powers]
        ma = [a**k for k in self.exposure_moments]
        mx = [m - m.mean() for m in mx]
        ma = [m - m.mean() for m in ma]
        rows = [u * v for u in mx for v in ma]
        if self.preserve_means:
            rows += mx + ma
        return np.array(rows, dtype=float).reshape(len(rows), dataset.n)


@dataclass(frozen=True)
class QPProblem:
    """``min w'Pw + q'w + offset`` s.t. ``eq_matrix w = eq_rhs``, ``w >= lower_bounds``."""

    quad: np.ndarray
    linear: np.ndarray
    eq_matrix: np.ndarray
    eq_rhs: np.ndarray
    lower_bounds: np.ndarray
    offset: float = 0.0
    warnings: tuple = ()

    def __post_init__(self):
        p = np.asarray(self.quad, dtype=float)
        object.__setattr__(self, "quad", (p + p.T) / 2.0)
        e = np.atleast_2d(np.asarray(self.eq_matrix, dtype=float))
        object.__setattr__(self, "eq_matrix", e)
        object.__setattr__(self, "eq_rhs", np.asarray(self.eq_rhs, dtype=float).ravel())
        object.__setattr__(self, "linear", np.asarray(self.linear, dtype=float).ravel())
        object.__setattr__(self, "lower_bounds", np.asarray(self.lower_bounds, dtype=float).ravel())
        n = p.shape[0]
        if e.shape[1] != n or self.linear.shape[0] != n or e.shape[0] != self.eq_rhs.shape[0]:
            raise ValueError("inconsistent QP dimensions")
        if not (np.all(e[0] == 1.0) and self.eq_rhs[0] == n):
            raise ValueError("the first equality row must be the sum-to-n constraint")

    @property
    def n(self) -> int:
        return self.quad.shape[0]

    def objective(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.quad @ w + self.linear @ w + self.offset)

    def is_feasible(self, w, tol: float = 1e-9) -> bool:
        w = np.asarray(w, dtype=float)
        resid = np.abs(self.eq_matrix @ w - self.eq_rhs)
        scale = 1.0 + np.abs(self.eq_matrix).sum(axis=1) * max(1.0, np.abs(w).max())
        return bool(np.all(w >= self.lower_bounds - tol) and np.all(resid <= tol * scale))


@dataclass(frozen=True)
class SolveStats:
    iterations: int
    converged: bool
    objective: float
    primal_residual: float
    dual_residual: float
    rho: float
    polished: bool
    warnings: tuple = ()


@dataclass(frozen=True)
class WeightsResult:
    weights: WeightVector
    criterion: CriterionValue
    ess: float
    iterations: int
    converged: bool
    objective: float
    warnings: tuple = ()

    def to_dict(self) -> dict:
        return {
            "ess": float(self.ess),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "objective": float(self.objective),
            "criterion": self.criterion.to_dict(),
        }


def build_qp(
    dataset: Dataset,
    ds: Optional[DistanceStructures] = None,
    config: Optional[SolverConfig] = None,
    dim_adjust: bool = True,
    moment_constraints: Optional[MomentSpec] = None,
) -> QPProblem:
    config = config or SolverConfig()
    ds = ds or pairwise_distances(dataset)
    n = ds.n
    if n != dataset.n:
        raise ValueError("distance structures do not match the dataset")
    c_x, c_a = dimension_coefficients(dataset.p, dim_adjust)
    n2 = float(n * n)
    quad = ds.centered_x * ds.centered_a / n2
    quad = quad - (c_x * ds.dist_x + c_a * ds.dist_a) / n2
    quad[np.diag_indices(n)] += config.lam / n2
    linear = 2.0 * (c_x * ds.dist_x.sum(axis=0) + c_a * ds.dist_a.sum(axis=0)) / n2
    offset = -(c_x * ds.dist_x.sum() + c_a * ds.dist_a.sum()) / n2

    rows = [np.ones(n)]
    rhs = [float(n)]
    warnings = []
    if moment_constraints is not None:
        extra = moment_constraints.constraint_rows(dataset)
        for r in extra:
            scale = np.abs(r).max()
            if scale == 0:
                warnings.append("dropped an all-zero moment constraint (constant moment)")
                continue
            rows.append(r / scale)
            rhs.append(0.0)
    return QPProblem(
        quad=quad,
        linear=linear,
        eq_matrix=np.array(rows),
        eq_rhs=np.array(rhs),
        lower_bounds=np.zeros(n),
        offset=offset,
        warnings=tuple(warnings),
    )


def _affine_parametrization(e: np.ndarray, b: np.ndarray, warnings: list):
    """Minimum-norm particular solution and orthonormal null-space basis of ``E w = b``."""
    m, n = e.shape
    u, s, vt = np.linalg.svd(e, full_matrices=True)
    tol = max(m, n) * np.finfo(float).eps * (s[0] if s.size else 0.0) * 10
    r = int(np.sum(s > tol))
    if r < m:
        warnings.append(f"equality constraints are linearly dependent (rank {r} of {m})")
    x0 = vt[:r].T @ ((u[:, :r].T @ b) / s[:r])
    resid = e @ x0 - b
    bad = np.flatnonzero(np.abs(resid) > 1e-8 * (1.0 + np.abs(b).max()) * max(1.0, np.abs(x0).max()))
    if bad.size:
        raise InfeasibleConstraintsError(f"equality constraints are inconsistent; violated rows: {bad.tolist()}")
    return x0, vt[r:].T


def _polish(problem: QPProblem, z: np.ndarray, passes: int = 4):
    """Solve the equality-constrained QP with the zero entries of ``z`` held at 0.

    Entries that come back negative are moved to the active set and the reduced
    system is solved again, up to ``passes`` times.
    """
    free = z > 0
    for _ in range(passes):
        if not free.any():
            return None
        pf = problem.quad[np.ix_(free, free)]
        ef = problem.eq_matrix[:, free]
        k, m = pf.shape[0], ef.shape[0]
        kkt = np.zeros((k + m, k + m))
        kkt[:k, :k] = 2.0 * pf
        kkt[:k, k:] = ef.T
        kkt[k:, :k] = ef
        rhs = np.concatenate([-problem.linear[free], problem.eq_rhs])
        try:
            sol = np.linalg.solve(kkt, rhs)
            if not np.allclose(kkt @ sol, rhs, rtol=1e-9, atol=1e-12 * np.abs(rhs).max()):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        w = np.zeros_like(z)
        w[free] = sol[:k]
        if w.min() >= -1e-12:
            return w
        free = free & (w > 0)
    return None


def _clean(w: np.ndarray, n: int) -> np.ndarray:
    """Clip roundoff negatives and restore the sum constraint by rescaling.

    Moment rows have zero right-hand side, so rescaling leaves them intact.
    """
    w = np.maximum(w, 0.0)
    total = w.sum()
    return w * (n / total) if total > 0 else np.ones(n)


def solve_qp(problem: QPProblem, config: Optional[SolverConfig] = None):
    """ADMM with adaptive penalty, started at uniform weights.

    Returns ``(WeightVector, SolveStats)``. The weights are always feasible;
    when the iteration does not meet both tolerances the returned point is the
    cleaned last iterate (or uniform weights, if those are feasible and better).
    """
    config = config or SolverConfig()
    n = problem.n
    warnings = list(problem.warnings)
    e, b = problem.eq_matrix, problem.eq_rhs
    x0, null = _affine_parametrization(e, b, warnings)

    g_null = null.T @ problem.quad @ null
    evals, evecs = np.linalg.eigh((g_null + g_null.T) / 2.0)
    basis = null @ evecs
    curv = 2.0 * evals
    scale = max(np.abs(curv).max() if curv.size else 0.0, np.abs(null.T @ problem.linear).max() if curv.size else 0.0)
    scale = scale if scale > 0 else 1.0
    curv = curv / scale
    if curv.size and curv.min() < -1e-9:
        warnings.append(f"objective is nonconvex on the feasible subspace (min curvature {curv.min():.3g})")
    c_lin = basis.T @ ((2.0 * problem.quad @ x0 + problem.linear) / scale)
    rho_floor = max(1e-6, -2.0 * curv.min()) if curv.size else 1e-6

    ones = np.ones(n)
    uniform_ok = problem.is_feasible(ones)
    z = ones.copy() if uniform_ok else _feasible_point(problem)
    u = np.zeros(n)
    x = z.copy()
    rho = max(config.admm_rho, rho_floor)
    alpha = 1.6
    converged = False
    r_p = r_d = np.inf
    it = 0
    for it in range(1, config.max_iterations + 1):
        t = basis.T @ (z - u - x0)
        x = x0 + basis @ ((rho * t - c_lin) / (curv + rho))
        xr = alpha * x + (1.0 - alpha) * z
        z_prev = z
        z = np.maximum(xr + u, problem.lower_bounds)
        u = u + xr - z

        r_p = np.abs(x - z).max()
        r_d = rho * np.abs(z - z_prev).max()
        eps_p = config.primal_tolerance * (1.0 + max(np.abs(x).max(), np.abs(z).max()))
        eps_d = config.dual_tolerance * (1.0 + rho * np.abs(u).max())
        if r_p <= eps_p and r_d <= eps_d:
            converged = True
            break
        if it % 25 == 0:
            ratio = np.sqrt((r_p / eps_p) / max(r_d / eps_d, 1e-300))
            if ratio > 5.0 or ratio < 0.2:
                new_rho = float(np.clip(rho * ratio, rho_floor, 1e6))
                u = u * (rho / new_rho)
                rho = new_rho

    candidates = [("admm-x", _clean(x, n)), ("admm-z", _clean(z, n))]
    polished_w = _polish(problem, z)
    if polished_w is not None:
        candidates.append(("polished", _clean(polished_w, n)))
    feasible = [(name, w) for name, w in candidates if problem.is_feasible(w, tol=1e-8)]
    if not feasible:
        projected = _project_feasible(candidates[0][1], problem, x0, null)
        if not problem.is_feasible(projected, tol=1e-8):
            projected = _feasible_point(problem)
        feasible = [("projected", projected)]
        warnings.append("final iterate needed an explicit feasibility projection")
    scored = [(problem.objective(w), i) for i, (_, w) in enumerate(feasible)]
    obj, best = min(scored)
    source, w = feasible[best]
    polished = source == "polished"
    if uniform_ok:
        obj_uniform = problem.objective(ones)
        if obj > obj_uniform:
            w, obj = ones, obj_uniform
            warnings.append("solution was not better than uniform weights; returning uniform")
    if not converged:
        warnings.append(f"ADMM stopped after {it} iterations without meeting tolerances")
        logger.warning("ADMM did not converge in %d iterations", it)
    stats = SolveStats(
        iterations=it,
        converged=converged,
        objective=obj,
        primal_residual=float(r_p),
        dual_residual=float(r_d),
        rho=float(rho),
        polished=bool(polished),
        warnings=tuple(warnings),
    )
    return WeightVector(w, "dcow"), stats


def _feasible_point(problem: QPProblem) -> np.ndarray:
    """Some point of ``{E w = b, w >= lower}`` from a zero-cost linear program."""
    res = linprog(
        np.zeros(problem.n),
        A_eq=problem.eq_matrix,
        b_eq=problem.eq_rhs,
        bounds=[(lb, None) for lb in problem.lower_bounds],
        method="highs",
    )
    if res.status == 2:
        raise InfeasibleConstraintsError("no nonnegative weights satisfy the equality constraints")
    if not res.success:
        raise InfeasibleConstraintsError(f"could not find a feasible point: {res.message}")
    return _clean(res.x, problem.n)


def _project_feasible(v, problem: QPProblem, x0, null, iterations: int = 20000):
    """Dykstra alternating projections onto ``{E w = b}`` and ``{w >= 0}``."""
    y = v.copy()
    p = np.zeros_like(y)
    q = np.zeros_like(y)
    for _ in range(iterations):
        a = x0 + null @ (null.T @ (y + p - x0))
        p = y + p - a
        y_new = np.maximum(a + q, 0.0)
        q = a + q - y_new
        if np.abs(y_new - y).max() < 1e-13:
            y = y_new
            break
        y = y_new
    return _clean(y, problem.n)


def independence_weights(
    dataset: Dataset,
    config: Optional[SolverConfig] = None,
    dim_adjust: bool = True,
    moment_constraints: Optional[MomentSpec] = None,
    ds: Optional[DistanceStructures] = None,
) -> WeightsResult:
    """Distance covariance optimal weights (penalized when ``config.lam > 0``)."""
    config = config or SolverConfig()
    ds = ds or pairwise_distances(dataset)
    problem = build_qp(dataset, ds, config, dim_adjust, moment_constraints)
    weights, stats = solve_qp(problem, config)
    label = "dcow" if moment_constraints is None else "dcow-dm"
    weights = WeightVector(weights.values, label)
    crit = criterion(ds, weights, dim_adjust, dataset.p)
    w = weights.values
    objective = crit.total + config.lam * float(w @ w) / dataset.n**2
    return WeightsResult(
        weights=weights,
        criterion=crit,
        ess=effective_sample_size(w),
        iterations=stats.iterations,
        converged=stats.converged,
        objective=objective,
        warnings=stats.warnings,
    )
