"""Entropy-regularized occupation program, solved by Frank-Wolfe.

The objective is separable in the total occupation xi(x, a)::

    f(xi) = sum xi * c - alpha * eps_hat * H(xi),
    H(xi) = -(xi / 2T) * log((xi + eta) / 2T)

and convex for xi >= 0. The feasible set is the extended-LP polytope, so the
linear minimization oracle is the simplex itself, kept warm across iterations.
Plain and away-step Frank-Wolfe crawl here once the entropy weight is large
(curvature near xi = 0 is of order weight / eta), so the active-vertex weights
are re-optimized by Newton steps after every oracle call. Every iterate is a
convex combination of simplex vertices and therefore feasible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..estimation import ConfidenceModel, LearnerParams
from .programs import OccupationSolution, decode, xi_operator
from .simplex import INFEASIBLE, ITERATION_LIMIT, OPTIMAL, LpProblem, SimplexSolver

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EntropyObjective:
    cost: np.ndarray  # (S, A)
    weight: np.ndarray  # alpha * eps_hat, (S, A)
    t_max: int
    eta: float

    def entropy(self, xi):
        xi = np.clip(np.asarray(xi, dtype=float), 0.0, None)
        two_t = 2.0 * self.t_max
        return -(xi / two_t) * np.log((xi + self.eta) / two_t)

    def entropy_derivative(self, xi):
        xi = np.clip(np.asarray(xi, dtype=float), 0.0, None)
        two_t = 2.0 * self.t_max
        return -(np.log((xi + self.eta) / two_t) + xi / (xi + self.eta)) / two_t

    def curvature(self, xi):
        """Second derivative of f along each xi coordinate."""
        xi = np.clip(np.asarray(xi, dtype=float), 0.0, None).reshape(self.cost.shape)
        u = xi + self.eta
        return self.weight * (1.0 / u + self.eta / u**2) / (2.0 * self.t_max)

    def __call__(self, xi) -> float:
        xi = np.asarray(xi, dtype=float).reshape(self.cost.shape)
        return float((xi * self.cost - self.weight * self.entropy(xi)).sum())

    def linear_part(self, xi) -> float:
        return float((np.asarray(xi).reshape(self.cost.shape) * self.cost).sum())

    def gradient(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).reshape(self.cost.shape)
        return self.cost - self.weight * self.entropy_derivative(xi)


def build_entropy_objective(params: LearnerParams, model: ConfidenceModel) -> EntropyObjective:
    return EntropyObjective(
        cost=np.array(model.cost, dtype=float),
        weight=params.alpha * model.eps_hat,
        t_max=params.t_max,
        eta=params.eta,
    )


def _line_search(obj: EntropyObjective, xi: np.ndarray, dxi: np.ndarray, gmax: float,
                 tol: float = 1e-10) -> float:
    """Minimize f(xi + t dxi) over [0, gmax] by bisection on the derivative."""

    def slope(t):
        return float((obj.gradient(xi + t * dxi) * dxi).sum())

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(gmax) <= 0.0:
        return gmax
    lo, hi = 0.0, gmax
    while hi - lo > tol * max(1.0, gmax):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _correct(objective: EntropyObjective, X: np.ndarray, w: np.ndarray, shape, max_steps: int = 50,
             tol: float = 1e-13) -> np.ndarray:
    """Re-optimize the convex weights ``w`` of the active vertices.

    ``X`` holds the vertices' xi vectors as columns. Newton steps on the affine
    hull of the weight simplex, clipped to keep every weight non-negative and
    followed by the exact line search.
    """
    k = len(w)
    if k == 1:
        return w
    for _ in range(max_steps):
        xi = X @ w
        g = X.T @ objective.gradient(xi).ravel()
        H = X.T @ (objective.curvature(xi).ravel()[:, None] * X)
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = H
        kkt[:k, k] = kkt[k, :k] = 1.0
        d = np.linalg.lstsq(kkt, np.r_[-g, 0.0], rcond=None)[0][:k]
        d -= d.mean() if abs(d.sum()) > 1e-12 else 0.0
        slope = float(g @ d)
        if slope > -tol:
            break
        neg = d < 0
        tmax = float(np.min(-w[neg] / d[neg])) if neg.any() else 1.0
        t = _line_search(objective, xi.reshape(shape), (X @ d).reshape(shape), min(1.0, tmax))
        if t <= 0.0:
            break
        w = w + t * d
        w[w < 1e-15] = 0.0
        w /= w.sum()
    return w


def solve_entropy_program(problem: LpProblem, objective: EntropyObjective, tol: float | None = None,
                          max_iter: int = 5000) -> OccupationSolution:
    """Fully-corrective Frank-Wolfe over the polytope of ``problem``.

    Each iteration takes a Frank-Wolfe step towards the oracle vertex with an
    exact line search, then re-optimizes the weights of all active vertices
    (simplicial decomposition). Iterates stay convex combinations of LP
    vertices, hence feasible.

    Parameters
    ----------
    problem : LpProblem
        Extended LP; only its constraints are used, its cost vector is ignored.
    objective : EntropyObjective
    tol : float, optional
        Stop once the Frank-Wolfe duality gap is at most this. Defaults to
        ``1e-6 * t_max``.
    max_iter : int
        Iteration cap; hitting it returns status ``iteration-limit`` with the
        last (feasible) iterate and its gap.

    Returns
    -------
    OccupationSolution
        ``solver_stats`` carries ``gaps`` and ``objectives`` per iteration.
    """
    tol = 1e-6 * objective.t_max if tol is None else tol
    M = xi_operator(problem)
    shape = objective.cost.shape
    lmo = SimplexSolver(problem)
    stats = {"iterations": 0, "lmo_pivots": 0, "gaps": [], "objectives": [], "drop_steps": 0}
    if not lmo.feasible:
        stats["phase1_objective"] = lmo.phase1_objective
        return OccupationSolution(lmo.status if lmo.status != OPTIMAL else INFEASIBLE, float("nan"),
                                  solver_stats=stats)

    def grad_z(xi_flat):
        return M.T @ objective.gradient(xi_flat).ravel()

    first = lmo.minimize(grad_z(np.zeros(M.shape[0])))
    if first.status != OPTIMAL:
        return OccupationSolution(first.status, float("nan"), solver_stats=stats)
    V = first.x[:, None]  # active vertices as columns
    w = np.ones(1)
    z = first.x.copy()
    status = ITERATION_LIMIT
    gap = float("inf")
    for it in range(max_iter):
        xi = M @ z
        g = grad_z(xi)
        res = lmo.minimize(g)
        stats["lmo_pivots"] += res.iterations
        if res.status != OPTIMAL:
            status = res.status
            break
        s = res.x
        gap = float(g @ z - g @ s)
        stats["gaps"].append(gap)
        stats["objectives"].append(objective(xi))
        if gap <= tol:
            status = OPTIMAL
            break
        t = _line_search(objective, xi.reshape(shape), (M @ (s - z)).reshape(shape), 1.0)
        w = w * (1.0 - t)
        match = np.flatnonzero(np.abs(V - s[:, None]).max(axis=0) <= 1e-12)
        if len(match):
            w[match[0]] += t
        else:
            V = np.column_stack([V, s])
            w = np.r_[w, t]
        w = _correct(objective, M @ V, w, shape)
        keep = w > 0
        if not keep.all():
            stats["drop_steps"] += 1
            V, w = V[:, keep], w[keep] / w[keep].sum()
        z = V @ w
        stats["iterations"] = it + 1
    stats["gap"] = gap
    stats["n_vertices"] = V.shape[1]
    if status == ITERATION_LIMIT:
        log.warning("Frank-Wolfe stopped at the iteration cap with gap %.3g", gap)
    h, g_, xi = decode(problem, z)
    eq, ub = problem.residuals(z)
    stats["eq_residual"], stats["ub_residual"] = eq, ub
    return OccupationSolution(status, objective(xi), h, g_, xi, z, stats)
