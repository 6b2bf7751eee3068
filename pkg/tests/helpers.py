"""Shared builders for tests."""

from __future__ import annotations

import numpy as np

from safereach.mdp import Mdp, Policy


def layered_mdp(rng: np.random.Generator, n_living: int = 3, n_actions: int = 2,
                unsafe_terminal: bool = True, t_max: int | None = None) -> Mdp:
    """Random transient MDP: living states only move forward, so every policy terminates.

    Layout: living 0..n_living-1, unsafe n_living, goal n_living+1. With a
    non-terminal unsafe state, U moves to the goal or to the last living state.
    """
    nH = n_living
    u, e = nH, nH + 1
    nS = nH + 2
    P = np.zeros((nS, n_actions, nS))
    for x in range(nH):
        for a in range(n_actions):
            targets = [*range(x + 1, nH), u, e]
            w = rng.dirichlet(np.ones(len(targets)))
            w[w < 1e-3] = 0.0
            w[-1] += 1.0 - w.sum()
            P[x, a, targets] = w
    if not unsafe_terminal:
        for a in range(n_actions):
            w = rng.uniform(0.3, 1.0)
            P[u, a, e] = w
            P[u, a, nH - 1] = 1.0 - w
    cost = np.zeros((nS, n_actions))
    cost[:nH] = rng.uniform(-1.0, 1.0, size=(nH, n_actions))
    if not unsafe_terminal:
        cost[u] = rng.uniform(-1.0, 1.0, size=n_actions)
    return Mdp(
        states=tuple(str(i + 1) for i in range(nS)),
        actions=tuple(str(i + 1) for i in range(n_actions)),
        living=frozenset(range(nH)),
        unsafe=frozenset({u}),
        goal=frozenset({e}),
        kernel=P,
        cost=cost,
        t_max=t_max or (nH + 2 if not unsafe_terminal else nH),
        unsafe_terminal=unsafe_terminal,
        initial_state=0,
    )


def random_policy(mdp: Mdp, rng: np.random.Generator) -> Policy:
    probs = np.zeros((mdp.n_states, mdp.n_actions))
    nt = mdp.nonterminal_mask
    probs[nt] = rng.dirichlet(np.ones(mdp.n_actions), size=int(nt.sum()))
    return Policy(probs)


def two_state_toy(kappa: float = 0.5) -> Mdp:
    """One living state whose actions both enter U with probability ``kappa``."""
    P = np.zeros((3, 2, 3))
    P[0, :, 1] = kappa
    P[0, :, 2] = 1.0 - kappa
    cost = np.zeros((3, 2))
    cost[0] = [-0.5, -0.2]
    return Mdp(("h", "u", "e"), ("a", "b"), frozenset({0}), frozenset({1}), frozenset({2}),
               P, cost, t_max=1, initial_state=0)
