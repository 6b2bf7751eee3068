"""Occupation-measure programs for the reach-avoid problem.

Two LPs are built here:

* the known-model LP over state-action measures (gamma, beta), where gamma
  counts visits before the first entry into U or E and beta counts visits
  after entering U and before reaching E;
* the optimistic extended LP over state-action-state measures (h, g), whose
  box rows keep the kernel implied by h and g inside the confidence set.

When unsafe states are terminal nothing happens after entering U, so beta and
g are fixed to zero and the balance rows for U (and for beta/g on H) are
omitted. Keeping them would force zero inflow into U.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..estimation import ConfidenceModel, LearnerParams, modified_cost
from ..mdp import Mdp, Policy, kappa_table
from .simplex import OPTIMAL, LpProblem, LpResult, simplex_solve


@dataclass
class OccupationSolution:
    """Decoded LP/convex-program solution.

    ``h``/``g`` hold the pre-/post-entry measures: shape (S, A) for the
    known-model LP, (S, A, S) for the extended program.
    """

    status: str
    objective: float
    h: np.ndarray | None = None
    g: np.ndarray | None = None
    xi: np.ndarray | None = None
    x: np.ndarray | None = None
    solver_stats: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _names(prefix, mdp, triple):
    S, A = mdp.states, mdp.actions
    if triple:
        return [f"{prefix}_{x}_{a}_{y}" for x in S for a in A for y in S]
    return [f"{prefix}_{x}_{a}" for x in S for a in A]


class _Rows:
    def __init__(self, n):
        self.n = n
        self.eq, self.beq, self.geq = [], [], []
        self.ub, self.bub, self.gub = [], [], []

    def add_eq(self, row, rhs, group):
        self.eq.append(row)
        self.beq.append(rhs)
        self.geq.append(group)

    def add_ub(self, row, rhs, group):
        self.ub.append(row)
        self.bub.append(rhs)
        self.gub.append(group)

    def zero_fix(self, j, group):
        row = np.zeros(self.n)
        row[j] = 1.0
        self.add_eq(row, 0.0, group)

    def matrices(self):
        n = self.n
        A_eq = np.array(self.eq).reshape(-1, n)
        A_ub = np.array(self.ub).reshape(-1, n)
        return A_eq, np.array(self.beq, float), A_ub, np.array(self.bub, float)


def build_known_lp(mdp: Mdp, p: float, x0: int | None = None) -> LpProblem:
    """Constrained LP over (gamma, beta) for a known kernel.

    Variable layout: ``gamma[x, a]`` at ``x * A + a``, ``beta`` offset by S*A.
    """
    x0 = mdp.x0 if x0 is None else x0
    nS, nA = mdp.n_states, mdp.n_actions
    m = nS * nA
    n = 2 * m
    P = mdp.kernel
    H, U, E = sorted(mdp.living), sorted(mdp.unsafe), sorted(mdp.goal)
    gi = lambda x, a: x * nA + a  # noqa: E731
    bi = lambda x, a: m + x * nA + a  # noqa: E731
    rows = _Rows(n)
    for x in U + E:
        for a in range(nA):
            rows.zero_fix(gi(x, a), "zero_gamma")
    beta_zero = range(nS) if mdp.unsafe_terminal else E
    for x in beta_zero:
        for a in range(nA):
            rows.zero_fix(bi(x, a), "zero_beta")

    for y in H:
        row = np.zeros(n)
        for x in H:
            for a in range(nA):
                row[gi(x, a)] += P[x, a, y] - (x == y)
        rows.add_eq(row, -float(y == x0), "flow_gamma")
    if not mdp.unsafe_terminal:
        for y in H:
            row = np.zeros(n)
            for x in H + U:
                for a in range(nA):
                    row[bi(x, a)] += P[x, a, y] - (x == y)
            rows.add_eq(row, 0.0, "flow_beta")
        for y in U:
            row = np.zeros(n)
            for x in H:
                for a in range(nA):
                    row[gi(x, a)] += P[x, a, y]
                    row[bi(x, a)] += P[x, a, y]
            for x in U:
                for a in range(nA):
                    row[bi(x, a)] += P[x, a, y] - (x == y)
            rows.add_eq(row, 0.0, "flow_unsafe")

    kap = kappa_table(mdp)
    row = np.zeros(n)
    for x in H:
        for a in range(nA):
            row[gi(x, a)] = kap[x, a]
    rows.add_ub(row, p, "safety")

    c = np.concatenate([mdp.cost.ravel(), mdp.cost.ravel()])
    A_eq, b_eq, A_ub, b_ub = rows.matrices()
    return LpProblem(
        c, A_eq, b_eq, A_ub, b_ub,
        var_names=_names("gamma", mdp, False) + _names("beta", mdp, False),
        eq_groups=rows.geq, ub_groups=rows.gub,
        layout={"kind": "known", "shape": (nS, nA)},
    )


def build_extended_lp(mdp: Mdp, model: ConfidenceModel, params: LearnerParams,
                      x0: int | None = None, cost=None) -> LpProblem:
    """Optimistic LP over (h, g) using the learner's confidence set.

    Reads only the partition, proxy/terminal flags and costs of ``mdp``;
    its kernel is never touched. ``cost`` overrides the objective
    coefficients (defaults to the optimistic modified cost).

    Variable layout: ``h[x, a, y]`` at ``(x * A + a) * S + y``, ``g`` offset by S*A*S.
    """
    x0 = mdp.x0 if x0 is None else x0
    nS, nA = mdp.n_states, mdp.n_actions
    m = nS * nA * nS
    n = 2 * m
    H, U, E = sorted(mdp.living), sorted(mdp.unsafe), sorted(mdp.goal)
    P_hat, eps = model.p_hat, model.eps
    hi = lambda x, a, y: (x * nA + a) * nS + y  # noqa: E731
    rows = _Rows(n)

    for x in U + E:
        for a in range(nA):
            for y in range(nS):
                rows.zero_fix(hi(x, a, y), "zero_h")
    g_zero = range(nS) if mdp.unsafe_terminal else E
    for x in g_zero:
        for a in range(nA):
            for y in range(nS):
                rows.zero_fix(m + hi(x, a, y), "zero_g")

    def out_of(y, off):
        return [off + hi(y, a, z) for a in range(nA) for z in range(nS)]

    for y in H:
        row = np.zeros(n)
        for x in H:
            for a in range(nA):
                row[hi(x, a, y)] += 1.0
        row[out_of(y, 0)] -= 1.0
        rows.add_eq(row, -float(y == x0), "flow_h")
    if not mdp.unsafe_terminal:
        for y in H:
            row = np.zeros(n)
            for x in H + U:
                for a in range(nA):
                    row[m + hi(x, a, y)] += 1.0
            row[out_of(y, m)] -= 1.0
            rows.add_eq(row, 0.0, "flow_g")
        for y in U:
            row = np.zeros(n)
            for x in H:
                for a in range(nA):
                    row[hi(x, a, y)] += 1.0
                    row[m + hi(x, a, y)] += 1.0
            for x in U:
                for a in range(nA):
                    row[m + hi(x, a, y)] += 1.0
            row[out_of(y, m)] -= 1.0
            rows.add_eq(row, 0.0, "flow_unsafe")

    # confidence box: |h(x,a,y) - P_hat * sum_z h(x,a,z)| <= eps * sum_z h(x,a,z)
    for off, tag in ((0, "h"), (m, "g")):
        for sign, side in ((1.0, "upper"), (-1.0, "lower")):
            for x in H + U:
                for a in range(nA):
                    block = [off + hi(x, a, z) for z in range(nS)]
                    for y in range(nS):
                        row = np.zeros(n)
                        row[block] = -sign * (P_hat[x, a, y] + sign * eps[x, a, y])
                        row[off + hi(x, a, y)] += sign
                        rows.add_ub(row, 0.0, f"box_{tag}_{side}")

    row = np.zeros(n)
    coef = model.kappa_hat + 3.0 * model.eps_hat
    for x in H:
        for a in range(nA):
            row[[hi(x, a, y) for y in range(nS)]] = coef[x, a]
    rows.add_ub(row, params.p, "safety")

    ct = modified_cost(model, params) if cost is None else np.asarray(cost, float)
    c = np.tile(np.repeat(ct.ravel(), nS), 2)
    A_eq, b_eq, A_ub, b_ub = rows.matrices()
    return LpProblem(
        c, A_eq, b_eq, A_ub, b_ub,
        var_names=_names("h", mdp, True) + _names("g", mdp, True),
        eq_groups=rows.geq, ub_groups=rows.gub,
        layout={"kind": "extended", "shape": (nS, nA)},
    )


def expected_row_counts(mdp: Mdp, kind: str) -> dict[str, int]:
    """Row count per group, derived from the set sizes alone."""
    nS, nA = mdp.n_states, mdp.n_actions
    H, U, E = len(mdp.living), len(mdp.unsafe), len(mdp.goal)
    per = nS if kind == "extended" else 1
    out = {
        ("zero_h" if kind == "extended" else "zero_gamma"): (U + E) * nA * per,
        ("zero_g" if kind == "extended" else "zero_beta"): (nS if mdp.unsafe_terminal else E) * nA * per,
        ("flow_h" if kind == "extended" else "flow_gamma"): H,
        "safety": 1,
    }
    if not mdp.unsafe_terminal:
        out["flow_g" if kind == "extended" else "flow_beta"] = H
        out["flow_unsafe"] = U
    if kind == "extended":
        for tag in ("h", "g"):
            for side in ("upper", "lower"):
                out[f"box_{tag}_{side}"] = (H + U) * nA * nS
    return out


def decode(problem: LpProblem, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a raw variable vector into (h, g, xi)."""
    nS, nA = problem.layout["shape"]
    half = problem.n_vars // 2
    if problem.layout["kind"] == "known":
        h = x[:half].reshape(nS, nA)
        g = x[half:].reshape(nS, nA)
        return h, g, h + g
    h = x[:half].reshape(nS, nA, nS)
    g = x[half:].reshape(nS, nA, nS)
    return h, g, (h + g).sum(axis=2)


def xi_operator(problem: LpProblem) -> np.ndarray:
    """Matrix M with ``xi.ravel() == M @ x``."""
    nS, nA = problem.layout["shape"]
    m = nS * nA
    half = problem.n_vars // 2
    per = half // m
    M = np.zeros((m, problem.n_vars))
    for k in range(m):
        M[k, k * per : (k + 1) * per] = 1.0
        M[k, half + k * per : half + (k + 1) * per] = 1.0
    return M


def to_solution(problem: LpProblem, res: LpResult) -> OccupationSolution:
    stats = {
        "iterations": res.iterations,
        "phase1_objective": res.phase1_objective,
        "eq_residual": res.eq_residual,
        "ub_residual": res.ub_residual,
        "bland_used": res.bland_used,
    }
    if res.status != OPTIMAL:
        return OccupationSolution(res.status, res.objective, solver_stats=stats)
    h, g, xi = decode(problem, res.x)
    return OccupationSolution(res.status, res.objective, h, g, xi, res.x, stats)


def solve_lp(problem: LpProblem, max_iter: int = 20_000) -> OccupationSolution:
    return to_solution(problem, simplex_solve(problem, max_iter=max_iter))


def extract_policy(solution: OccupationSolution, fallback: Policy, mass_tol: float = 1e-12) -> Policy:
    """Normalize total occupation per state; states without mass copy ``fallback``."""
    if not solution.optimal:
        raise ValueError(f"cannot extract a policy from a {solution.status} solution")
    xi = np.clip(solution.xi, 0.0, None)
    mass = xi.sum(axis=1)
    probs = np.array(fallback.probs, copy=True)
    live = (mass > mass_tol) & (fallback.probs.sum(axis=1) > 0)
    probs[live] = xi[live] / mass[live, None]
    return Policy(probs)
