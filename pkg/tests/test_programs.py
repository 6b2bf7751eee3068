import itertools
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.optimize import linprog

from helpers import layered_mdp, two_state_toy
from safereach.estimation import ConfidenceModel, LearnerParams
from safereach.mdp import Mdp, Policy, kappa_table, safety_function, simulate_episode, value_function
from safereach.opt import (
    INFEASIBLE,
    OPTIMAL,
    OccupationSolution,
    build_extended_lp,
    build_known_lp,
    expected_row_counts,
    extract_policy,
    solve_lp,
)

PARAMS = LearnerParams(p=0.5, p_s=0.0872, t_max=5)


def _det_policies(mdp):
    live = sorted(mdp.living | (set() if mdp.unsafe_terminal else mdp.unsafe))
    for combo in itertools.product(range(mdp.n_actions), repeat=len(live)):
        yield Policy.deterministic(mdp, dict(zip(live, combo)))


def _oracle_model(mdp, K=2000):
    """Confidence model whose box collapses onto the true kernel."""
    m = ConfidenceModel.empty(mdp, K, 0.01)
    return replace(m, p_hat_override=np.array(mdp.kernel), radius_scale=0.0)


# -- known-model LP -------------------------------------------------------------


def test_known_lp_bundled_example(example_mdp):
    t = time.perf_counter()
    sol = solve_lp(build_known_lp(example_mdp, 0.5))
    elapsed = time.perf_counter() - t
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-0.396875, abs=1e-6)
    assert elapsed < 1.0
    pi = extract_policy(sol, Policy.uniform(example_mdp))
    assert pi.probs[0, 0] == pytest.approx(0.236 / 0.512, abs=1e-9)
    assert pi.probs[1, 1] == 1.0 and pi.probs[2, 0] == 1.0


def test_known_lp_matches_highs(example_mdp):
    prob = build_known_lp(example_mdp, 0.5)
    ref = linprog(prob.c, A_ub=prob.A_ub, b_ub=prob.b_ub, A_eq=prob.A_eq, b_eq=prob.b_eq, method="highs")
    assert solve_lp(prob).objective == pytest.approx(ref.fun, abs=1e-9)


def test_known_lp_vacuous_constraint_is_unconstrained_minimum(example_mdp):
    sol = solve_lp(build_known_lp(example_mdp, 1.0))
    best = min(value_function(example_mdp, pi)[0] for pi in _det_policies(example_mdp))
    assert sol.objective == pytest.approx(best, abs=1e-9)


def test_two_state_toy_infeasible():
    m = two_state_toy(0.5)
    # both actions give safety 0.5, so no mixture reaches 0.3
    assert all(safety_function(m, pi)[0] == pytest.approx(0.5) for pi in _det_policies(m))
    sol = solve_lp(build_known_lp(m, 0.3))
    assert sol.status == INFEASIBLE
    assert sol.solver_stats["phase1_objective"] > 1e-8
    assert solve_lp(build_known_lp(m, 0.5)).status == OPTIMAL


def test_known_lp_row_counts(example_mdp):
    prob = build_known_lp(example_mdp, 0.5)
    assert prob.row_counts() == expected_row_counts(example_mdp, "known")


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("unsafe_terminal", [True, False])
def test_known_lp_policy_evaluates_to_lp_value(seed, unsafe_terminal):
    rng = np.random.default_rng(seed)
    m = layered_mdp(rng, 3, 2, unsafe_terminal)
    S_vals = [safety_function(m, pi)[0] for pi in _det_policies(m)]
    p = 0.5 * (min(S_vals) + max(S_vals))
    prob = build_known_lp(m, p)
    assert prob.row_counts() == expected_row_counts(m, "known")
    sol = solve_lp(prob)
    assert sol.status == OPTIMAL
    pi = extract_policy(sol, Policy.uniform(m))
    assert value_function(m, pi)[0] == pytest.approx(sol.objective, abs=1e-9)
    assert safety_function(m, pi)[0] <= p + 1e-9
    # deterministic policies that satisfy the constraint cannot beat the LP
    feas = [value_function(m, pi)[0] for pi, s in zip(_det_policies(m), S_vals) if s <= p + 1e-12]
    assert sol.objective <= min(feas) + 1e-9


def test_monte_carlo_occupation_round_trip(example_mdp):
    sol = solve_lp(build_known_lp(example_mdp, 0.5))
    pi = extract_policy(sol, Policy.uniform(example_mdp))
    n = 100_000
    rng = np.random.default_rng(2024)
    visits = np.zeros((n, 5, 2))
    for i in range(n):
        for s in simulate_episode(example_mdp, pi, 0, rng).steps:
            visits[i, s.state, s.action] += 1
    mean = visits.mean(axis=0)
    se = visits.std(axis=0, ddof=1) / np.sqrt(n)
    target = sol.xi
    assert np.all(np.abs(mean - target) <= 3 * se + 1e-12)


# -- extended LP ----------------------------------------------------------------


def test_extended_lp_row_counts(example_mdp):
    prob = build_extended_lp(example_mdp, ConfidenceModel.empty(example_mdp, 2000, 0.01), PARAMS)
    assert prob.row_counts() == expected_row_counts(example_mdp, "extended")
    assert prob.row_counts()["box_h_upper"] == 3 * 2 * 5 + 1 * 2 * 5
    assert prob.n_vars == 2 * 5 * 2 * 5


def test_extended_lp_never_reads_kernel(example_mdp):
    model = ConfidenceModel.empty(example_mdp, 2000, 0.01)
    blind = Mdp(example_mdp.states, example_mdp.actions, example_mdp.living, example_mdp.unsafe, example_mdp.goal,
                np.zeros_like(example_mdp.kernel), example_mdp.cost, example_mdp.t_max, example_mdp.proxy,
                initial_state=example_mdp.initial_state)
    a = build_extended_lp(example_mdp, model, PARAMS)
    b = build_extended_lp(blind, model, PARAMS)
    assert np.array_equal(a.A_eq, b.A_eq) and np.array_equal(a.A_ub, b.A_ub) and np.array_equal(a.c, b.c)


def test_extended_lp_collapses_to_known_lp(example_mdp):
    model = _oracle_model(example_mdp)
    sol = solve_lp(build_extended_lp(example_mdp, model, PARAMS))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-0.396875, abs=1e-6)
    pi = extract_policy(sol, Policy.uniform(example_mdp))
    assert safety_function(example_mdp, pi)[0] <= 0.5 + 1e-6
    assert value_function(example_mdp, pi)[0] == pytest.approx(-0.396875, abs=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_extended_lp_collapses_with_nonterminal_unsafe(seed):
    m = layered_mdp(np.random.default_rng(100 + seed), 3, 2, unsafe_terminal=False)
    S_vals = [safety_function(m, pi)[0] for pi in _det_policies(m)]
    p = 0.5 * (min(S_vals) + max(S_vals))
    known = solve_lp(build_known_lp(m, p))
    params = LearnerParams(p=p, p_s=min(S_vals), t_max=m.t_max)
    prob = build_extended_lp(m, _oracle_model(m), params)
    assert prob.row_counts() == expected_row_counts(m, "extended")
    ext = solve_lp(prob)
    assert ext.objective == pytest.approx(known.objective, abs=1e-6)


def test_episode_one_is_infeasible(example_mdp):
    sol = solve_lp(build_extended_lp(example_mdp, ConfidenceModel.empty(example_mdp, 2000, 0.01), PARAMS))
    assert sol.status == INFEASIBLE


def test_large_sample_limit(example_mdp):
    model = ConfidenceModel.empty(example_mdp, 2000, 0.01)
    counts = np.rint(np.array(example_mdp.kernel) * 1e12).astype(np.int64)
    sol = solve_lp(build_extended_lp(example_mdp, replace(model, transition_counts=counts), PARAMS))
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(-0.396875, abs=0.01)


def test_extended_solution_invariants(example_mdp):
    model = ConfidenceModel.empty(example_mdp, 2000, 0.01)
    counts = np.rint(np.array(example_mdp.kernel) * 1e6).astype(np.int64)
    prob = build_extended_lp(example_mdp, replace(model, transition_counts=counts), PARAMS)
    sol = solve_lp(prob)
    assert sol.status == OPTIMAL
    np.testing.assert_allclose(sol.xi, (sol.h + sol.g).sum(axis=2), atol=1e-8)
    assert sol.xi.max() <= example_mdp.t_max + 1e-6
    eq, ub = prob.residuals(sol.x)
    assert eq <= 1e-7 and ub <= 1e-7


# -- policy extraction ----------------------------------------------------------


def _sol(xi):
    return OccupationSolution(OPTIMAL, 0.0, xi=np.asarray(xi, float))


def test_extract_uniform_and_deterministic(example_mdp):
    base = Policy.uniform(example_mdp)
    xi = np.zeros((5, 2))
    xi[0] = [0.3, 0.3]
    xi[1] = [0.0, 0.7]
    pi = extract_policy(_sol(xi), Policy(np.array(base.probs) * 1.0))
    np.testing.assert_array_equal(pi.probs[0], [0.5, 0.5])
    np.testing.assert_array_equal(pi.probs[1], [0.0, 1.0])


def test_extract_zero_mass_uses_fallback(example_mdp):
    fb = np.zeros((5, 2))
    fb[:3] = [0.1, 0.9]
    xi = np.zeros((5, 2))
    xi[0] = [1.0, 0.0]
    pi = extract_policy(_sol(xi), Policy(fb))
    np.testing.assert_array_equal(pi.probs[2], [0.1, 0.9])
    assert not pi.probs[3:].any()


def test_extract_rejects_non_optimal():
    with pytest.raises(ValueError):
        extract_policy(OccupationSolution(INFEASIBLE, float("nan")), Policy(np.ones((1, 1))))


def test_thin_box_stays_feasible(example_mdp):
    # radii around 1e-7: regression for phase 1 pivoting on near-zero entries
    model = ConfidenceModel.empty(example_mdp, 2000, 0.01)
    counts = np.rint(np.array(example_mdp.kernel) * 1e8).astype(np.int64)
    prob = build_extended_lp(example_mdp, replace(model, transition_counts=counts), PARAMS)
    sol = solve_lp(prob)
    assert sol.status == OPTIMAL
    pi = extract_policy(sol, Policy.uniform(example_mdp))
    assert value_function(example_mdp, pi)[0] == pytest.approx(-0.396875, abs=5e-3)
    eq, ub = prob.residuals(sol.x)
    assert eq <= 1e-9 and ub <= 1e-9


def test_nonterminal_unsafe_merged_policy_can_overshoot():
    # Normalizing gamma + beta merges pre- and post-entry behaviour at shared
    # states. The pre-entry policy gamma / sum(gamma) reproduces the LP's
    # safety exactly; the merged one need not respect the budget.
    m = layered_mdp(np.random.default_rng(60), 1, 2, unsafe_terminal=False)
    safe_min = min(safety_function(m, Policy.deterministic(m, a))[0] for a in range(2))
    p = safe_min + 0.5 * (1 - safe_min)
    sol = solve_lp(build_known_lp(m, p))
    assert sol.status == OPTIMAL
    merged = extract_policy(sol, Policy.uniform(m))
    pre = extract_policy(OccupationSolution(OPTIMAL, 0.0, xi=sol.h), Policy.uniform(m))
    kap = kappa_table(m)
    assert safety_function(m, pre)[0] == pytest.approx((sol.h * kap).sum(), abs=1e-9)
    assert safety_function(m, pre)[0] <= p + 1e-9
    assert value_function(m, merged)[0] == pytest.approx(sol.objective, abs=1e-9)
    assert safety_function(m, merged)[0] > p + 1e-4

