"""Dense two-phase simplex for small LPs.

Problems are given in the form::

    min c @ x   s.t.  A_eq @ x == b_eq,  A_ub @ x <= b_ub,  x >= 0

Entering variables follow Dantzig's rule until a run of degenerate pivots is
seen, after which the phase finishes under Bland's rule (smallest index on both
entering and leaving side), which cannot cycle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"


@dataclass
class LpProblem:
    """A linear program plus labels for its variables and constraint rows."""

    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    var_names: list[str] = field(default_factory=list)
    eq_groups: list[str] = field(default_factory=list)
    ub_groups: list[str] = field(default_factory=list)
    layout: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.c)
        self.c = np.asarray(self.c, dtype=float)
        self.A_eq = np.asarray(self.A_eq, dtype=float).reshape(-1, n)
        self.A_ub = np.asarray(self.A_ub, dtype=float).reshape(-1, n)
        self.b_eq = np.asarray(self.b_eq, dtype=float).reshape(-1)
        self.b_ub = np.asarray(self.b_ub, dtype=float).reshape(-1)
        if len(self.b_eq) != len(self.A_eq) or len(self.b_ub) != len(self.A_ub):
            raise ValueError("row count mismatch between matrices and right-hand sides")
        if not self.var_names:
            self.var_names = [f"x{i}" for i in range(n)]
        if not self.eq_groups:
            self.eq_groups = ["eq"] * len(self.b_eq)
        if not self.ub_groups:
            self.ub_groups = ["ub"] * len(self.b_ub)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def row_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for g in self.eq_groups + self.ub_groups:
            out[g] = out.get(g, 0) + 1
        return out

    def rows(self, group: str):
        """(matrix, rhs, sense) of one labelled row group."""
        if group in self.eq_groups:
            idx = [i for i, g in enumerate(self.eq_groups) if g == group]
            return self.A_eq[idx], self.b_eq[idx], "=="
        idx = [i for i, g in enumerate(self.ub_groups) if g == group]
        return self.A_ub[idx], self.b_ub[idx], "<="

    def residuals(self, x: np.ndarray) -> tuple[float, float]:
        """Max equality violation and max inequality excess at ``x``."""
        eq = np.abs(self.A_eq @ x - self.b_eq).max(initial=0.0)
        ub = np.clip(self.A_ub @ x - self.b_ub, 0.0, None).max(initial=0.0)
        return float(eq), float(ub)

    def with_objective(self, c) -> LpProblem:
        return LpProblem(
            np.asarray(c, float), self.A_eq, self.b_eq, self.A_ub, self.b_ub,
            self.var_names, self.eq_groups, self.ub_groups, self.layout,
        )

    def to_lp_format(self) -> str:
        """CPLEX-LP text, for cross-checking with external solvers."""

        def expr(row):
            terms = []
            for j in np.flatnonzero(row):
                v = row[j]
                terms.append(f"{'-' if v < 0 else '+'} {abs(v):.17g} {self.var_names[j]}")
            s = " ".join(terms) if terms else "0 " + self.var_names[0]
            return s[2:] if s.startswith("+ ") else s

        lines = ["\\ generated by safereach", "Minimize", " obj: " + expr(self.c), "Subject To"]
        for i, row in enumerate(self.A_eq):
            lines.append(f" {self.eq_groups[i]}_{i}: {expr(row)} = {self.b_eq[i]:.17g}")
        for i, row in enumerate(self.A_ub):
            lines.append(f" {self.ub_groups[i]}_{i}: {expr(row)} <= {self.b_ub[i]:.17g}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LpResult:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int = 0
    phase1_objective: float = 0.0
    eq_residual: float = 0.0
    ub_residual: float = 0.0
    bland_used: bool = False


class SimplexSolver:
    """Phase 1 runs once at construction; :meth:`minimize` then reuses the
    current feasible basis, so repeated solves over the same polytope with
    different objectives start warm.

    The tableau is rebuilt from the original columns every ``refactor_every``
    pivots and before a solution is reported, so round-off does not pile up
    across warm starts.
    """

    def __init__(self, problem: LpProblem, max_iter: int = 20_000, tol: float = 1e-9,
                 degenerate_switch: int = 30, refactor_every: int = 50):
        self.problem = problem
        self.max_iter = max_iter
        self.tol = tol
        self.degenerate_switch = degenerate_switch
        self.refactor_every = refactor_every
        self.iterations = 0
        self.bland_used = False
        self.status = OPTIMAL
        self.phase1_objective = 0.0
        self._presolve()
        if self.status == OPTIMAL:
            self._phase1()

    @property
    def feasible(self) -> bool:
        return self.status == OPTIMAL

    # -- setup -------------------------------------------------------------

    def _presolve(self):
        p, tol = self.problem, self.tol
        n = p.n_vars
        fixed = np.zeros(n, dtype=bool)
        eq_keep = np.ones(len(p.b_eq), dtype=bool)
        for i, row in enumerate(p.A_eq):
            nz = np.flatnonzero(np.abs(row) > 0)
            if len(nz) == 1 and abs(p.b_eq[i]) <= tol:
                fixed[nz[0]] = True
                eq_keep[i] = False
        keep = ~fixed
        A_eq = p.A_eq[eq_keep][:, keep]
        b_eq = p.b_eq[eq_keep]
        A_ub = p.A_ub[:, keep]
        b_ub = p.b_ub.copy()
        # rows emptied by fixing
        empty_eq = ~np.any(A_eq != 0, axis=1)
        empty_ub = ~np.any(A_ub != 0, axis=1)
        if (np.abs(b_eq[empty_eq]) > tol).any() or (b_ub[empty_ub] < -tol).any():
            self.status = INFEASIBLE
            self.phase1_objective = float("inf")
            return
        A_eq, b_eq = A_eq[~empty_eq], b_eq[~empty_eq]
        A_ub, b_ub = A_ub[~empty_ub], b_ub[~empty_ub]
        self.keep = keep
        self.n = int(keep.sum())
        m_eq, m_ub = len(b_eq), len(b_ub)
        self.m = m_eq + m_ub
        # standard form [x | slacks], rows sign-adjusted so rhs >= 0
        A = np.zeros((self.m, self.n + m_ub))
        A[:m_eq, : self.n] = A_eq
        A[m_eq:, : self.n] = A_ub
        A[m_eq:, self.n :] = np.eye(m_ub)
        b = np.concatenate([b_eq, b_ub])
        needs_art = np.ones(self.m, dtype=bool)
        needs_art[m_eq:] = b_ub < 0
        neg = b < 0
        A[neg] *= -1
        b[neg] *= -1
        self.A_std = A
        self.b_std = b
        self.needs_art = needs_art
        self.m_eq = m_eq

    def _phase1(self):
        m, nstd = self.A_std.shape
        art_rows = np.flatnonzero(self.needs_art)
        n_art = len(art_rows)
        cols = np.zeros((m, nstd + n_art))
        cols[:, :nstd] = self.A_std
        basis = np.empty(m, dtype=int)
        for k, r in enumerate(art_rows):
            cols[r, nstd + k] = 1.0
            basis[r] = nstd + k
        for r in np.flatnonzero(~self.needs_art):
            basis[r] = self.n + (r - self.m_eq)  # slack of that ub row
        self.cols, self.rhs, self.basis = cols, self.b_std, basis
        self.cost = np.zeros(nstd + n_art)
        self.cost[nstd:] = 1.0
        self.T = np.zeros((m + 1, nstd + n_art + 1))
        self._reinvert()
        status = self._iterate()
        self.phase1_objective = float(-self.T[m, -1])
        scale = 1.0 + np.abs(self.b_std).max(initial=0.0)
        if status == ITERATION_LIMIT:
            self.status = ITERATION_LIMIT
            return
        if self.phase1_objective > 1e-8 * scale:
            self.status = INFEASIBLE
            return
        # drive artificials out of the basis, dropping redundant rows
        keep_rows = np.ones(m, dtype=bool)
        for r in range(m):
            if self.basis[r] >= nstd:
                row = np.abs(self.T[r, :nstd])
                j = int(np.argmax(row))
                if row[j] > 1e-7:
                    self._pivot(r, j)
                else:
                    keep_rows[r] = False
        self.basis = self.basis[keep_rows]
        self.A_std = self.A_std[keep_rows]
        self.b_std = self.b_std[keep_rows]
        self.m = len(self.basis)
        self.cols, self.rhs = self.A_std, self.b_std
        self.cost = np.zeros(nstd)
        self.T = np.zeros((self.m + 1, nstd + 1))
        self._reinvert()

    # -- pivoting ------------------------------------------------------------

    def _reinvert(self) -> None:
        """Rebuild the tableau as B^-1 [A | b] for the current basis."""
        m = len(self.basis)
        B = self.cols[:, self.basis]
        try:
            body = np.linalg.solve(B, np.column_stack([self.cols, self.rhs]))
        except np.linalg.LinAlgError:
            return
        if not np.isfinite(body).all():
            return
        xb = body[:, -1]
        xb[(xb < 0) & (xb > -1e-9)] = 0.0
        self.T[:m] = body
        cb = self.cost[self.basis]
        self.T[m, :-1] = self.cost - cb @ body[:, :-1]
        self.T[m, -1] = -cb @ body[:, -1]
        self.T[m, self.basis] = 0.0
        self._since_reinvert = 0

    def _pivot(self, r: int, j: int):
        T = self.T
        T[r] /= T[r, j]
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        T[:, j] = 0.0
        T[r, j] = 1.0
        self.basis[r] = j
        self._since_reinvert += 1
        if self._since_reinvert >= self.refactor_every:
            self._reinvert()

    def _ratio_row(self, colj: np.ndarray, rhs: np.ndarray, bland: bool) -> int | None:
        piv_tol = self.tol * max(1.0, np.abs(colj).max(initial=0.0))
        pos = colj > piv_tol
        if not pos.any():
            return None
        ratios = np.full(len(colj), np.inf)
        ratios[pos] = rhs[pos] / colj[pos]
        if bland:
            rmin = ratios.min()
            ties = np.flatnonzero(ratios <= rmin + 1e-12 * max(1.0, abs(rmin)))
            return int(ties[np.argmin(self.basis[ties])])
        # Harris: among rows within a small feasibility slack of the minimum
        # ratio, pivot on the largest entry
        relaxed = np.full(len(colj), np.inf)
        relaxed[pos] = (rhs[pos] + 1e-10) / colj[pos]
        cand = np.flatnonzero(pos & (ratios <= relaxed.min()))
        if len(cand) == 0:
            cand = np.flatnonzero(ratios == ratios.min())
        return int(cand[np.argmax(colj[cand])])

    def _iterate(self) -> str:
        T = self.T
        m = len(self.basis)
        ncol = T.shape[1] - 1
        bland = False
        degenerate = 0
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            rc_tol = self.tol * max(1.0, np.abs(T[m, :ncol]).max(initial=0.0))
            rc = T[m, :ncol]
            cand = np.flatnonzero(rc < -rc_tol)
            if len(cand) == 0:
                if self._since_reinvert == 0:
                    return OPTIMAL
                self._reinvert()
                if not (T[m, :ncol] < -rc_tol).any():
                    return OPTIMAL
                continue
            j = int(cand[0]) if bland else int(cand[np.argmin(rc[cand])])
            r = self._ratio_row(T[:m, j], T[:m, -1], bland)
            if r is None:
                return UNBOUNDED
            if T[r, -1] <= self.tol * max(1.0, T[r, j]):
                degenerate += 1
                if degenerate >= self.degenerate_switch and not bland:
                    bland = True
                    self.bland_used = True
            else:
                degenerate = 0
            self._pivot(r, j)
            T[:m, -1] = np.maximum(T[:m, -1], 0.0)
            self.iterations += 1

    # -- public --------------------------------------------------------------

    def minimize(self, c=None) -> LpResult:
        p = self.problem
        c = p.c if c is None else np.asarray(c, dtype=float)
        if self.status != OPTIMAL:
            return LpResult(self.status, None, float("nan"), self.iterations, self.phase1_objective,
                            bland_used=self.bland_used)
        start_iter = self.iterations
        nstd = self.A_std.shape[1]
        self.cost = np.zeros(nstd)
        self.cost[: self.n] = c[self.keep]
        self._reinvert()
        status = self._iterate()
        if status != OPTIMAL:
            return LpResult(status, None, float("nan"), self.iterations - start_iter,
                            self.phase1_objective, bland_used=self.bland_used)
        xs = np.zeros(nstd)
        xs[self.basis] = np.clip(self.T[: self.m, -1], 0.0, None)
        x = np.zeros(p.n_vars)
        x[self.keep] = xs[: self.n]
        eq, ub = p.residuals(x)
        return LpResult(OPTIMAL, x, float(c @ x), self.iterations - start_iter,
                        self.phase1_objective, eq, ub, self.bland_used)


def simplex_solve(problem: LpProblem, max_iter: int = 20_000) -> LpResult:
    """Solve ``problem`` from scratch."""
    res = SimplexSolver(problem, max_iter=max_iter).minimize()
    if res.status == ITERATION_LIMIT:
        log.warning("simplex hit the iteration limit (%d)", max_iter)
    return res
