"""Finite reach-avoid MDPs: representation, validation, exact evaluation and simulation.

States are partitioned into a living set H, an unsafe set U and a goal set E.
Goal states are always terminal; unsafe states are terminal only when
``unsafe_terminal`` is set. Terminal states carry no kernel rows.

Internally every state and action is an integer index into ``Mdp.states`` /
``Mdp.actions``; the string ids only matter at the file boundary.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

STOCHASTIC_TOL = 1e-9
SOLVE_RESIDUAL_TOL = 1e-10


class MdpFormatError(ValueError):
    """The MDP document is malformed (missing key, unknown id, bad type)."""


class MdpValidationError(ValueError):
    """The MDP violates a structural invariant."""


class NumericalError(RuntimeError):
    pass


class ProxyWarning(UserWarning):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite reach-avoid MDP.

    ``kernel`` has shape (S, A, S) and ``cost`` shape (S, A). Rows of terminal
    states are all zero in both.
    """

    states: tuple[str, ...]
    actions: tuple[str, ...]
    living: frozenset[int]
    unsafe: frozenset[int]
    goal: frozenset[int]
    kernel: np.ndarray
    cost: np.ndarray
    t_max: int
    proxy: frozenset[int] = frozenset()
    unsafe_terminal: bool = True
    initial_state: int | None = None
    safe_actions: dict[int, int] = field(default_factory=dict)
    safe_h: float | None = None
    reference: dict = field(default_factory=dict)

    def __post_init__(self):
        nS, nA = len(self.states), len(self.actions)
        kernel = _frozen(self.kernel)
        cost = _frozen(self.cost)
        if kernel.shape != (nS, nA, nS):
            raise MdpFormatError(f"kernel shape {kernel.shape} != {(nS, nA, nS)}")
        if cost.shape != (nS, nA):
            raise MdpFormatError(f"cost shape {cost.shape} != {(nS, nA)}")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "cost", cost)
        for name in ("living", "unsafe", "goal", "proxy"):
            object.__setattr__(self, name, frozenset(int(i) for i in getattr(self, name)))

    # -- structure ---------------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def terminal(self) -> frozenset[int]:
        return self.goal | self.unsafe if self.unsafe_terminal else self.goal

    @property
    def nonterminal_mask(self) -> np.ndarray:
        m = np.ones(self.n_states, dtype=bool)
        m[list(self.terminal)] = False
        return m

    def mask(self, subset) -> np.ndarray:
        m = np.zeros(self.n_states, dtype=bool)
        m[list(subset)] = True
        return m

    @property
    def x0(self) -> int:
        if self.initial_state is not None:
            return self.initial_state
        return min(self.living)

    @property
    def effective_proxy(self) -> frozenset[int]:
        """The declared proxy set, or all of H when none is declared."""
        return self.proxy if self.proxy else self.living

    def state_index(self, sid) -> int:
        try:
            return self.states.index(str(sid))
        except ValueError:
            raise KeyError(f"unknown state {sid!r}") from None

    def action_index(self, aid) -> int:
        try:
            return self.actions.index(str(aid))
        except ValueError:
            raise KeyError(f"unknown action {aid!r}") from None

    def p(self, x, a, y) -> float:
        """Kernel lookup by ids."""
        return float(self.kernel[self.state_index(x), self.action_index(a), self.state_index(y)])

    def with_proxy(self, proxy) -> Mdp:
        from dataclasses import replace

        return replace(self, proxy=frozenset(proxy))

    # -- serialization -----------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> Mdp:
        required = ("states", "actions", "living", "unsafe", "goal", "t_max", "transitions", "costs")
        for key in required:
            if key not in doc:
                raise MdpFormatError(f"missing required field {key!r}")
        states = tuple(str(s) for s in doc["states"])
        actions = tuple(str(a) for a in doc["actions"])
        if len(set(states)) != len(states) or len(set(actions)) != len(actions):
            raise MdpFormatError("duplicate state or action ids")
        s_idx = {s: i for i, s in enumerate(states)}
        a_idx = {a: i for i, a in enumerate(actions)}

        def sidx(v, where):
            try:
                return s_idx[str(v)]
            except KeyError:
                raise MdpFormatError(f"{where}: unknown state {v!r}") from None

        def aidx(v, where):
            try:
                return a_idx[str(v)]
            except KeyError:
                raise MdpFormatError(f"{where}: unknown action {v!r}") from None

        nS, nA = len(states), len(actions)
        kernel = np.zeros((nS, nA, nS))
        for n, tr in enumerate(doc["transitions"]):
            where = f"transitions[{n}]"
            try:
                x, a, y, p = tr["from"], tr["action"], tr["to"], tr["p"]
            except (KeyError, TypeError):
                raise MdpFormatError(f"{where}: expected keys from/action/to/p") from None
            if not isinstance(p, (int, float)) or isinstance(p, bool):
                raise MdpFormatError(f"{where}: p must be a number")
            kernel[sidx(x, where), aidx(a, where), sidx(y, where)] = float(p)
        cost = np.zeros((nS, nA))
        for n, row in enumerate(doc["costs"]):
            where = f"costs[{n}]"
            try:
                x, a, c = row["state"], row["action"], row["c"]
            except (KeyError, TypeError):
                raise MdpFormatError(f"{where}: expected keys state/action/c") from None
            cost[sidx(x, where), aidx(a, where)] = float(c)
        t_max = doc["t_max"]
        if not isinstance(t_max, int) or isinstance(t_max, bool) or t_max < 1:
            raise MdpFormatError("t_max must be a positive integer")
        safe_actions = {
            sidx(x, "safe_actions"): aidx(a, "safe_actions")
            for x, a in (doc.get("safe_actions") or {}).items()
        }
        init = doc.get("initial_state")
        return cls(
            states=states,
            actions=actions,
            living=frozenset(sidx(s, "living") for s in doc["living"]),
            unsafe=frozenset(sidx(s, "unsafe") for s in doc["unsafe"]),
            goal=frozenset(sidx(s, "goal") for s in doc["goal"]),
            proxy=frozenset(sidx(s, "proxy") for s in (doc.get("proxy") or [])),
            unsafe_terminal=bool(doc.get("unsafe_terminal", True)),
            kernel=kernel,
            cost=cost,
            t_max=t_max,
            initial_state=None if init is None else sidx(init, "initial_state"),
            safe_actions=safe_actions,
            safe_h=doc.get("safe_h"),
            reference=dict(doc.get("reference") or {}),
        )

    def to_dict(self) -> dict:
        S, A = self.states, self.actions
        ids = lambda idx: [S[i] for i in sorted(idx)]  # noqa: E731
        doc = {
            "states": list(S),
            "actions": list(A),
            "living": ids(self.living),
            "unsafe": ids(self.unsafe),
            "goal": ids(self.goal),
            "proxy": ids(self.proxy),
            "unsafe_terminal": self.unsafe_terminal,
            "t_max": self.t_max,
            "transitions": [
                {"from": S[x], "action": A[a], "to": S[y], "p": float(self.kernel[x, a, y])}
                for x, a, y in zip(*np.nonzero(self.kernel))
            ],
            "costs": [
                {"state": S[x], "action": A[a], "c": float(self.cost[x, a])}
                for x in range(self.n_states)
                for a in range(self.n_actions)
                if x not in self.goal
            ],
        }
        if self.initial_state is not None:
            doc["initial_state"] = S[self.initial_state]
        if self.safe_actions:
            doc["safe_actions"] = {S[x]: A[a] for x, a in sorted(self.safe_actions.items())}
        if self.safe_h is not None:
            doc["safe_h"] = self.safe_h
        if self.reference:
            doc["reference"] = dict(self.reference)
        return doc

    @classmethod
    def from_json(cls, path) -> Mdp:
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise MdpFormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
        if not isinstance(doc, dict):
            raise MdpFormatError(f"{path}: top level must be an object")
        return cls.from_dict(doc)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def same_model(self, other: Mdp) -> bool:
        return (
            self.states == other.states
            and self.actions == other.actions
            and (self.living, self.unsafe, self.goal, self.proxy) == (other.living, other.unsafe, other.goal, other.proxy)
            and self.unsafe_terminal == other.unsafe_terminal
            and self.t_max == other.t_max
            and self.initial_state == other.initial_state
            and self.safe_actions == other.safe_actions
            and self.safe_h == other.safe_h
            and self.reference == other.reference
            and np.array_equal(self.kernel, other.kernel)
            and np.array_equal(self.cost, other.cost)
        )


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary randomized policy, ``probs[x, a] = pi(a | x)``.

    Rows of terminal states are left at zero.
    """

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))

    @classmethod
    def uniform(cls, mdp: Mdp) -> Policy:
        probs = np.zeros((mdp.n_states, mdp.n_actions))
        probs[mdp.nonterminal_mask] = 1.0 / mdp.n_actions
        return cls(probs)

    @classmethod
    def deterministic(cls, mdp: Mdp, choice: dict[int, int] | int) -> Policy:
        """``choice`` maps state -> action, or is a single action used everywhere."""
        probs = np.zeros((mdp.n_states, mdp.n_actions))
        for x in np.flatnonzero(mdp.nonterminal_mask):
            a = choice if isinstance(choice, (int, np.integer)) else choice[x]
            probs[x, a] = 1.0
        return cls(probs)

    def check(self, mdp: Mdp) -> None:
        if self.probs.shape != (mdp.n_states, mdp.n_actions):
            raise ValueError(f"policy shape {self.probs.shape} does not match MDP")
        rows = self.probs[mdp.nonterminal_mask]
        if (rows < 0).any() or np.abs(rows.sum(axis=1) - 1).max(initial=0) > STOCHASTIC_TOL:
            raise ValueError("policy rows must be probability vectors on non-terminal states")

    def __eq__(self, other):
        return isinstance(other, Policy) and np.array_equal(self.probs, other.probs)

    __hash__ = None


class Step(NamedTuple):
    state: int
    action: int
    cost: float
    next_state: int


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]
    truncated: bool
    hit_unsafe: bool
    terminal_state: int

    def __len__(self):
        return len(self.steps)

    @property
    def total_cost(self) -> float:
        return sum(s.cost for s in self.steps)


# -- validation ------------------------------------------------------------


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise MdpValidationError("; ".join(self.errors))


def _closed_under_some_action(mdp: Mdp, candidates: np.ndarray) -> np.ndarray:
    """Largest subset C of ``candidates`` where every state has an action staying in C."""
    C = candidates.copy()
    support = mdp.kernel > 0
    while True:
        leaves = support & ~C[None, None, :]
        stays = ~leaves.any(axis=2)  # (S, A): action keeps all mass in C
        keep = C & stays.any(axis=1)
        if (keep == C).all():
            return C
        C = keep


def _reachable(adj: np.ndarray, sources: np.ndarray) -> np.ndarray:
    seen = sources.copy()
    frontier = sources.copy()
    while frontier.any():
        nxt = adj[frontier].any(axis=0) & ~seen
        seen |= nxt
        frontier = nxt
    return seen


def validate_mdp(mdp: Mdp) -> ValidationReport:
    """Check partition, stochasticity, costs, accessibility and transience.

    Errors make the model unusable; proxy-set and stopping-bound mismatches are
    only reported as warnings.
    """
    rep = ValidationReport()
    nS = mdp.n_states
    H, U, E = mdp.living, mdp.unsafe, mdp.goal
    if H & U or H & E or U & E:
        rep.errors.append("partition: living, unsafe and goal sets overlap")
    if (H | U | E) != frozenset(range(nS)):
        rep.errors.append("partition: living, unsafe and goal sets do not cover all states")
    if not H:
        rep.errors.append("partition: living set is empty")
    if not E:
        rep.errors.append("partition: goal set is empty")

    P = mdp.kernel
    if (P < 0).any() or (P > 1).any():
        rep.errors.append("stochasticity: kernel entries must lie in [0, 1]")
    nt = mdp.nonterminal_mask
    term = ~nt
    if P[term].any():
        rep.errors.append("terminal states must not carry kernel rows")
    sums = P[nt].sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1) > STOCHASTIC_TOL)
    for i, a in bad:
        x = np.flatnonzero(nt)[i]
        rep.errors.append(
            f"stochasticity: row ({mdp.states[x]}, {mdp.actions[a]}) sums to {sums[i, a]:.12g}"
        )

    c = mdp.cost
    if np.abs(c).max(initial=0) > 1:
        rep.errors.append("cost: |c(x, a)| must be at most 1")
    if E and np.abs(c[list(E)]).max() > 0:
        rep.errors.append("cost: goal states must have zero cost")
    if mdp.t_max < 1:
        rep.errors.append("t_max must be positive")
    if mdp.initial_state is not None and mdp.initial_state not in H:
        rep.errors.append("initial state must be a living state")
    if rep.errors:
        return rep

    # Accessibility of E under the uniform policy (edge if any action has mass).
    adj = (P > 0).any(axis=1)
    rev = adj.T
    reach_goal = _reachable(rev, mdp.mask(E))
    must_reach = H if mdp.unsafe_terminal else H | U
    missing = sorted(x for x in must_reach if not reach_goal[x])
    if missing:
        rep.errors.append(
            "accessibility: goal set unreachable from " + ", ".join(mdp.states[x] for x in missing)
        )
    # Transience under every deterministic policy: no closed class among non-terminal states.
    closed = _closed_under_some_action(mdp, nt)
    if closed.any():
        rep.errors.append(
            "transience: some deterministic policy keeps the process forever in "
            + ", ".join(mdp.states[x] for x in np.flatnonzero(closed))
        )

    if not rep.errors:
        longest = _longest_path(mdp)
        if longest is None:
            rep.warnings.append("t_max: transition graph has cycles, t_max cannot be an almost-sure bound")
        elif longest > mdp.t_max:
            rep.warnings.append(f"t_max: a path of {longest} steps exceeds t_max={mdp.t_max}")

    if mdp.proxy:
        if not mdp.proxy <= H:
            rep.errors.append("proxy: proxy states must be living states")
        else:
            kap = P[:, :, list(U)].sum(axis=2)
            for x in sorted(mdp.proxy):
                if not np.allclose(kap[x], 1.0, atol=STOCHASTIC_TOL):
                    rep.warnings.append(
                        f"proxy: state {mdp.states[x]} does not reach the unsafe set in one step "
                        "with probability one under every action"
                    )
            for x in sorted(H - mdp.proxy):
                if kap[x].max() > 0:
                    rep.warnings.append(
                        f"proxy: non-proxy living state {mdp.states[x]} can enter the unsafe set directly"
                    )
    return rep


def _longest_path(mdp: Mdp) -> int | None:
    """Length of the longest path from a non-terminal state to termination, None if cyclic."""
    nt = np.flatnonzero(mdp.nonterminal_mask)
    adj = (mdp.kernel > 0).any(axis=1)
    depth: dict[int, int] = {}
    visiting: set[int] = set()

    def visit(x):
        if x in depth:
            return depth[x]
        if x in visiting:
            raise _Cycle
        visiting.add(x)
        best = 0
        for y in np.flatnonzero(adj[x]):
            best = max(best, 1 + (visit(int(y)) if mdp.nonterminal_mask[y] else 0))
        visiting.discard(x)
        depth[x] = best
        return best

    try:
        return max(visit(int(x)) for x in nt)
    except _Cycle:
        return None


class _Cycle(Exception):
    pass


def warn_on_report(rep: ValidationReport) -> None:
    for w in rep.warnings:
        warnings.warn(w, ProxyWarning if w.startswith("proxy") else UserWarning, stacklevel=3)


# -- exact evaluation -------------------------------------------------------


def kappa(mdp: Mdp, x: int, a: int) -> float:
    """One-step probability of entering U from (x, a)."""
    if x in mdp.goal or x in mdp.unsafe:
        raise ValueError(f"kappa undefined at goal/unsafe state {mdp.states[x]}")
    return float(mdp.kernel[x, a, list(mdp.unsafe)].sum())


def kappa_table(mdp: Mdp) -> np.ndarray:
    """kappa for every (x, a); zero on U and E."""
    k = mdp.kernel[:, :, list(mdp.unsafe)].sum(axis=2)
    k[list(mdp.unsafe | mdp.goal)] = 0.0
    return k


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        v = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"singular evaluation system: {e}") from None
    res = np.abs(A @ v - b).max(initial=0.0)
    if not np.isfinite(v).all() or res > SOLVE_RESIDUAL_TOL:
        raise NumericalError(f"evaluation residual {res:.3g} above tolerance")
    return v


def safety_function(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Probability of hitting U before E, for every state.

    Solves ``(I - P_pi|HH) S_H = P_pi(H -> U)`` with S = 1 on U and S = 0 on E.
    """
    H = sorted(mdp.living)
    P_pi = np.einsum("xa,xay->xy", policy.probs, mdp.kernel)
    A = np.eye(len(H)) - P_pi[np.ix_(H, H)]
    b = P_pi[np.ix_(H, sorted(mdp.unsafe))].sum(axis=1)
    S = np.zeros(mdp.n_states)
    S[list(mdp.unsafe)] = 1.0
    S[H] = np.clip(_solve(A, b), 0.0, 1.0)
    return S


def value_function(mdp: Mdp, policy: Policy) -> np.ndarray:
    """Expected cumulative cost until absorption, for every state (0 on terminal states)."""
    N = np.flatnonzero(mdp.nonterminal_mask)
    P_pi = np.einsum("xa,xay->xy", policy.probs, mdp.kernel)
    c_pi = (policy.probs * mdp.cost).sum(axis=1)
    A = np.eye(len(N)) - P_pi[np.ix_(N, N)]
    V = np.zeros(mdp.n_states)
    V[N] = _solve(A, c_pi[N])
    return V


# -- simulation -------------------------------------------------------------


def simulate_episode(mdp: Mdp, policy: Policy, x0: int, rng_seed) -> Trajectory:
    """Sample one episode from ``x0`` until a terminal state or ``t_max`` steps.

    ``rng_seed`` is anything accepted by :func:`numpy.random.default_rng`.
    """
    if x0 not in mdp.living:
        raise ValueError("episodes start in the living set")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    pi_cdf = np.cumsum(policy.probs, axis=1)
    p_cdf = np.cumsum(mdp.kernel, axis=2)
    terminal = ~mdp.nonterminal_mask
    unsafe = mdp.mask(mdp.unsafe)
    nA, nS = mdp.n_actions, mdp.n_states
    steps = []
    x = x0
    hit_unsafe = False
    for _ in range(mdp.t_max):
        u, v = rng.random(2)
        a = min(int(np.searchsorted(pi_cdf[x], u * pi_cdf[x, -1], side="right")), nA - 1)
        y = min(int(np.searchsorted(p_cdf[x, a], v * p_cdf[x, a, -1], side="right")), nS - 1)
        steps.append(Step(x, a, float(mdp.cost[x, a]), y))
        if unsafe[y]:
            hit_unsafe = True
        x = y
        if terminal[x]:
            break
    return Trajectory(
        steps=tuple(steps), truncated=not terminal[x], hit_unsafe=hit_unsafe, terminal_state=x
    )


def occupation_counts(trajectories: Sequence[Trajectory], n_states: int, n_actions: int) -> np.ndarray:
    out = np.zeros((n_states, n_actions))
    for tr in trajectories:
        for s in tr.steps:
            out[s.state, s.action] += 1
    return out
