"""Safe baseline synthesis and the episodic pSRL / ER-pSRL learners.

The true kernel is used for two things only: sampling transitions and exact
offline evaluation of the deployed policy (regret bookkeeping). Planning sees
the confidence model, the costs and the state partition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import ConfidenceModel, LearnerParams, update_counts
from .mdp import Mdp, Policy, Trajectory, kappa_table, safety_function, simulate_episode, value_function
from .opt import (
    ITERATION_LIMIT,
    OPTIMAL,
    OccupationSolution,
    build_entropy_objective,
    build_extended_lp,
    build_known_lp,
    extract_policy,
    solve_entropy_program,
    solve_lp,
)

log = logging.getLogger(__name__)

ALGOS = ("psrl", "er-psrl")
PROXY_MODES = ("declared", "all-living")


class ParameterError(ValueError):
    pass


class NoSafePolicyError(RuntimeError):
    pass


def q_floor(p: float, t_max: int, h: float) -> float:
    """Smallest admissible probability of the safe action on proxy states."""
    return (1.0 - p / t_max) / (1.0 - h)


@dataclass(frozen=True)
class SafeBaselineSpec:
    safe_actions: dict[int, int]
    h_bound: float
    q: float

    @classmethod
    def minimal(cls, safe_actions: dict[int, int], h_bound: float, p: float, t_max: int) -> SafeBaselineSpec:
        return cls(dict(safe_actions), h_bound, q_floor(p, t_max, h_bound))


def make_safe_baseline(mdp: Mdp, spec: SafeBaselineSpec, p: float) -> Policy:
    """Mixture policy playing the safe action with probability ``q`` on proxy states.

    Proxy states are ``mdp.effective_proxy`` (all of H when none is declared);
    every other non-terminal state is uniform.
    """
    if not 0 <= spec.h_bound <= p / mdp.t_max:
        raise ParameterError(f"h={spec.h_bound} outside [0, p/t_max]")
    floor = q_floor(p, mdp.t_max, spec.h_bound)
    if spec.q > 1.0 or spec.q < floor - 1e-12:
        raise ParameterError(f"q={spec.q} outside [{floor:.6g}, 1]")
    nA = mdp.n_actions
    probs = Policy.uniform(mdp).probs.copy()
    for x in sorted(mdp.effective_proxy):
        if x not in spec.safe_actions:
            raise ParameterError(f"no safe action declared for proxy state {mdp.states[x]}")
        a_s = spec.safe_actions[x]
        probs[x] = (1.0 - spec.q) / (nA - 1) if nA > 1 else 0.0
        probs[x, a_s] = spec.q if nA > 1 else 1.0
    return Policy(probs)


@dataclass(frozen=True)
class GroundTruth:
    policy: Policy
    value: float
    safety: float
    solution: OccupationSolution
    baseline: Policy
    p_s: float
    q_min: float


def compute_ground_truth(mdp: Mdp, p: float, x0: int | None = None,
                         proxy_mode: str = "declared") -> GroundTruth:
    """Known-model optimum plus the baseline and its exact safety level."""
    x0 = mdp.x0 if x0 is None else x0
    sol = solve_lp(build_known_lp(mdp, p, x0))
    if not sol.optimal:
        raise NoSafePolicyError(f"no {p}-safe policy exists (known-model LP is {sol.status})")
    base_mdp = mdp if proxy_mode == "declared" else mdp.with_proxy(frozenset())
    h = 0.0 if mdp.safe_h is None else float(mdp.safe_h)
    spec = SafeBaselineSpec.minimal(mdp.safe_actions, h, p, mdp.t_max)
    baseline = make_safe_baseline(base_mdp, spec, p)
    pi_star = extract_policy(sol, baseline)
    p_s = float(safety_function(mdp, baseline)[x0])
    if p_s > p:
        raise NoSafePolicyError(f"baseline safety {p_s:.6g} exceeds p={p}")
    return GroundTruth(
        policy=pi_star,
        value=float(value_function(mdp, pi_star)[x0]),
        safety=float(safety_function(mdp, pi_star)[x0]),
        solution=sol,
        baseline=baseline,
        p_s=p_s,
        q_min=spec.q,
    )


@dataclass
class EpisodeRecord:
    k: int
    feasible: bool
    policy: Policy
    trajectory: Trajectory
    objective_regret: float
    constraint_regret: float
    cumulative_regret: float
    safety: float
    solver_status: str

    def as_row(self, seed: int, algo: str) -> dict:
        return {
            "seed": seed,
            "algo": algo,
            "k": self.k,
            "feasible": self.feasible,
            "R_k": self.objective_regret,
            "C_k": self.constraint_regret,
            "cumulative_regret": self.cumulative_regret,
            "episode_length": len(self.trajectory),
            "hit_unsafe": self.trajectory.hit_unsafe,
        }


@dataclass
class RunLedger:
    algo: str
    seed: int
    proxy_mode: str = "declared"
    records: list[EpisodeRecord] = field(default_factory=list)

    @property
    def objective_regret(self) -> np.ndarray:
        return np.array([r.objective_regret for r in self.records])

    @property
    def constraint_regret(self) -> np.ndarray:
        return np.array([r.constraint_regret for r in self.records])

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.array([r.cumulative_regret for r in self.records])

    @property
    def feasible(self) -> np.ndarray:
        return np.array([r.feasible for r in self.records], dtype=bool)

    def rows(self) -> list[dict]:
        return [r.as_row(self.seed, self.algo) for r in self.records]


@dataclass(frozen=True)
class LearnerState:
    mdp: Mdp  # true model; sampling and evaluation only
    params: LearnerParams
    model: ConfidenceModel
    truth: GroundTruth
    x0: int
    cumulative: float = 0.0


def init_learner(mdp: Mdp, K: int, p: float = 0.5, delta: float = 0.01, eta: float = 0.1,
                 proxy_mode: str = "declared", truth: GroundTruth | None = None) -> LearnerState:
    if proxy_mode not in PROXY_MODES:
        raise ValueError(f"proxy_mode must be one of {PROXY_MODES}")
    truth = truth or compute_ground_truth(mdp, p, proxy_mode=proxy_mode)
    params = LearnerParams(p=p, p_s=truth.p_s, t_max=mdp.t_max, eta=eta)
    return LearnerState(mdp, params, ConfidenceModel.empty(mdp, K, delta), truth, mdp.x0)


def _plan_lp(state: LearnerState) -> OccupationSolution:
    return solve_lp(build_extended_lp(state.mdp, state.model, state.params, state.x0))


def _plan_entropy(state: LearnerState) -> OccupationSolution:
    problem = build_extended_lp(state.mdp, state.model, state.params, state.x0)
    return solve_entropy_program(problem, build_entropy_objective(state.params, state.model))


def _episode(state: LearnerState, k: int, rng_seed, planner) -> tuple[LearnerState, EpisodeRecord]:
    sol = planner(state)
    if sol.status == OPTIMAL:
        policy = extract_policy(sol, state.truth.baseline)
    else:
        if sol.status == ITERATION_LIMIT:
            log.warning("episode %d: solver hit its iteration limit, using the baseline", k)
        policy = state.truth.baseline
    traj = simulate_episode(state.mdp, policy, state.x0, rng_seed)
    model = update_counts(state.model, traj)
    V = float(value_function(state.mdp, policy)[state.x0])
    S = float(safety_function(state.mdp, policy)[state.x0])
    R = V - state.truth.value
    cum = state.cumulative + R
    rec = EpisodeRecord(
        k=k,
        feasible=sol.status == OPTIMAL,
        policy=policy,
        trajectory=traj,
        objective_regret=R,
        constraint_regret=S - state.truth.safety,
        cumulative_regret=cum,
        safety=S,
        solver_status=sol.status,
    )
    return replace(state, model=model, cumulative=cum), rec


def run_episode_psrl(state: LearnerState, k: int, rng_seed) -> tuple[LearnerState, EpisodeRecord]:
    """One pSRL episode: optimistic extended LP, baseline when it is infeasible."""
    return _episode(state, k, rng_seed, _plan_lp)


def run_episode_er_psrl(state: LearnerState, k: int, rng_seed) -> tuple[LearnerState, EpisodeRecord]:
    """One ER-pSRL episode: entropy-regularized program over the same polytope."""
    return _episode(state, k, rng_seed, _plan_entropy)


EPISODE_FN = {"psrl": run_episode_psrl, "er-psrl": run_episode_er_psrl}


def run_seed(mdp: Mdp, algo: str, K: int, seed: int, p: float = 0.5, delta: float = 0.01,
             eta: float = 0.1, proxy_mode: str = "declared", horizon_K: int | None = None,
             truth: GroundTruth | None = None) -> RunLedger:
    """Run ``K`` episodes for one seed.

    ``horizon_K`` is the episode budget entering the confidence radii and
    defaults to ``K``.
    """
    if algo not in EPISODE_FN:
        raise ValueError(f"algo must be one of {ALGOS}")
    state = init_learner(mdp, horizon_K or max(K, 1), p, delta, eta, proxy_mode, truth)
    ledger = RunLedger(algo, seed, proxy_mode)
    step = EPISODE_FN[algo]
    for k in range(1, K + 1):
        state, rec = step(state, k, np.random.default_rng([seed, k]))
        ledger.records.append(rec)
    return ledger


def run(mdp: Mdp, algo: str, K: int, seeds, **kw) -> list[RunLedger]:
    """Independent runs, one per seed."""
    return [run_seed(mdp, algo, K, s, **kw) for s in seeds]


def baseline_kappa_ok(mdp: Mdp, spec: SafeBaselineSpec) -> bool:
    """True kernel check that every declared safe action is h-safe."""
    k = kappa_table(mdp)
    return all(k[x, a] <= spec.h_bound + 1e-12 for x, a in spec.safe_actions.items() if x in mdp.living)
