import math
from dataclasses import replace

import cvxpy as cp
import numpy as np
import pytest

from helpers import layered_mdp
from safereach.estimation import ConfidenceModel, LearnerParams
from safereach.opt import (
    INFEASIBLE,
    ITERATION_LIMIT,
    OPTIMAL,
    EntropyObjective,
    build_entropy_objective,
    build_extended_lp,
    solve_entropy_program,
    solve_lp,
)
from safereach.opt.programs import xi_operator

PARAMS = LearnerParams(p=0.5, p_s=0.0872, t_max=5)


def _obj(weight=1.0, shape=(5, 2), t_max=5, eta=0.1, cost=None):
    cost = np.zeros(shape) if cost is None else cost
    return EntropyObjective(cost, np.full(shape, weight), t_max, eta)


def test_entropy_reference_values():
    H = _obj().entropy
    assert H(0.0) == 0.0
    assert H(10 - 0.1) == pytest.approx(0.0, abs=1e-15)
    assert H(5.0) == pytest.approx(0.5 * math.log(10 / 5.1))
    assert H(5.0) == pytest.approx(0.336672, abs=1e-6)


def test_entropy_derivative_matches_finite_difference():
    obj = _obj()
    xs = np.linspace(0.01, 9.0, 50)
    h = 1e-6
    fd = (obj.entropy(xs + h) - obj.entropy(xs - h)) / (2 * h)
    np.testing.assert_allclose(obj.entropy_derivative(xs), fd, rtol=1e-6, atol=1e-9)


def test_objective_is_midpoint_convex():
    rng = np.random.default_rng(5)
    obj = _obj(weight=3.7, cost=rng.uniform(-1, 1, (5, 2)))
    for _ in range(100):
        a, b = rng.uniform(0, 10, (2, 5, 2))
        assert obj(0.5 * (a + b)) <= 0.5 * (obj(a) + obj(b)) + 1e-12


def test_alpha_weight_from_params(example_mdp):
    model = ConfidenceModel.empty(example_mdp, 2000, 0.01)
    obj = build_entropy_objective(PARAMS, model)
    np.testing.assert_allclose(obj.weight, PARAMS.alpha * model.eps_hat)


def _converged_model(mdp, n=10**6):
    model = ConfidenceModel.empty(mdp, 2000, 0.01)
    counts = np.rint(np.array(mdp.kernel) * n).astype(np.int64)
    return replace(model, transition_counts=counts)


def test_zero_radius_matches_lp(example_mdp):
    model = replace(ConfidenceModel.empty(example_mdp, 2000, 0.01),
                    p_hat_override=np.array(example_mdp.kernel), radius_scale=0.0)
    prob = build_extended_lp(example_mdp, model, PARAMS)
    lp = solve_lp(prob)
    fw = solve_entropy_program(prob, build_entropy_objective(PARAMS, model))
    assert fw.status == OPTIMAL
    assert fw.objective == pytest.approx(lp.objective, abs=1e-6 * 5)
    assert fw.objective == pytest.approx(-0.396875, abs=1e-5)


def test_converged_counts_feasible_and_below_linear_part(example_mdp):
    model = _converged_model(example_mdp)
    prob = build_extended_lp(example_mdp, model, PARAMS)
    obj = build_entropy_objective(PARAMS, model)
    sol = solve_entropy_program(prob, obj)
    assert sol.status == OPTIMAL
    assert sol.objective <= obj.linear_part(sol.xi) + 1e-12
    eq, ub = prob.residuals(sol.x)
    assert eq <= 1e-6 and ub <= 1e-6


def test_gap_sequence_and_monotone_best(example_mdp):
    model = _converged_model(example_mdp, 2 * 10**4)
    prob = build_extended_lp(example_mdp, model, PARAMS)
    sol = solve_entropy_program(prob, build_entropy_objective(PARAMS, model))
    gaps = np.array(sol.solver_stats["gaps"])
    objs = np.array(sol.solver_stats["objectives"])
    assert (gaps >= -1e-9).all()
    best = np.minimum.accumulate(objs)
    assert (np.diff(best) <= 0).all()
    assert (np.diff(objs) <= 1e-9).all()  # exact line search never increases f


def test_iteration_cap_still_feasible(example_mdp):
    model = _converged_model(example_mdp, 2 * 10**4)
    prob = build_extended_lp(example_mdp, model, PARAMS)
    sol = solve_entropy_program(prob, build_entropy_objective(PARAMS, model), tol=0.0, max_iter=2)
    assert sol.status == ITERATION_LIMIT
    eq, ub = prob.residuals(sol.x)
    assert eq <= 1e-6 and ub <= 1e-6
    assert math.isfinite(sol.solver_stats["gap"])


def test_infeasible_polytope(example_mdp):
    model = ConfidenceModel.empty(example_mdp, 2000, 0.01)
    prob = build_extended_lp(example_mdp, model, PARAMS)
    assert solve_entropy_program(prob, build_entropy_objective(PARAMS, model)).status == INFEASIBLE


# -- projected-gradient oracle ----------------------------------------------------


def _projector(prob):
    n = prob.n_vars
    z = cp.Variable(n)
    target = cp.Parameter(n)
    cons = [z >= 0]
    if len(prob.b_eq):
        cons.append(prob.A_eq @ z == prob.b_eq)
    if len(prob.b_ub):
        cons.append(prob.A_ub @ z <= prob.b_ub)
    qp = cp.Problem(cp.Minimize(cp.sum_squares(z - target)), cons)

    def project(v):
        target.value = v
        qp.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
        return np.asarray(z.value)

    return project


def _projected_gradient(prob, obj, iters=400):
    """FISTA on the raw variables with Euclidean projection onto the polytope."""
    M = xi_operator(prob)
    project = _projector(prob)
    curv = obj.weight.max() / (2 * obj.t_max) * 2 / obj.eta  # bound on f'' in xi
    step = 1.0 / (curv * np.linalg.norm(M, 2) ** 2)

    def grad(z):
        return M.T @ obj.gradient(np.clip(M @ z, 0, None)).ravel()

    z = project(np.zeros(prob.n_vars))
    y, t = z.copy(), 1.0
    for _ in range(iters):
        z_new = project(y - step * grad(y))
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = z_new + (t - 1) / t_new * (z_new - z)
        z, t = z_new, t_new
    return obj((M @ z).reshape(obj.cost.shape)), z


def test_matches_projected_gradient_on_random_three_state_instance():
    rng = np.random.default_rng(17)
    mdp = layered_mdp(rng, n_living=1, n_actions=2, unsafe_terminal=False, t_max=4)
    model = ConfidenceModel.empty(mdp, 100, 0.05)
    counts = rng.multinomial(400, [1 / 3] * 3, size=(3, 2)) * 0
    for x in (0, 1):
        for a in range(2):
            counts[x, a] = rng.multinomial(400, mdp.kernel[x, a])
    model = replace(model, transition_counts=counts, radius_scale=0.05)
    params = LearnerParams(p=0.9, p_s=0.0, t_max=mdp.t_max)
    prob = build_extended_lp(mdp, model, params, cost=mdp.cost)
    obj = EntropyObjective(np.array(mdp.cost), np.full(mdp.cost.shape, 0.8), mdp.t_max, 0.1)
    fw = solve_entropy_program(prob, obj, tol=1e-9)
    assert fw.status == OPTIMAL
    pg_val, _ = _projected_gradient(prob, obj)
    assert fw.objective == pytest.approx(pg_val, abs=1e-3)
    # the entropy term is active: the answer differs from the pure LP
    lp = solve_lp(prob)
    assert lp.objective - fw.objective > 1e-3
