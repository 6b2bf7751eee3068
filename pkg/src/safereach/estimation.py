"""Visit counts, empirical kernel and empirical-Bernstein confidence radii."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .mdp import Mdp, Trajectory


def log_term(n_states: int, n_actions: int, K: int, delta: float) -> float:
    return math.log(2 * n_states * n_actions * K / delta)


def bernstein_radii(p_hat, n, L: float):
    """Per-coordinate radius ``sqrt(4 p(1-p) L / (n v 1)) + 14 L / (3 (n v 1))``.

    ``n`` broadcasts against ``p_hat``.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    n1 = np.maximum(np.asarray(n, dtype=float), 1.0)
    var = np.clip(p_hat * (1.0 - p_hat), 0.0, None)
    return np.sqrt(4.0 * var * L / n1) + 14.0 * L / (3.0 * n1)


@dataclass(frozen=True, eq=False)
class ConfidenceModel:
    """Counts gathered so far plus everything derived from them.

    Rows of terminal states never receive counts and have zero radii. Unvisited
    non-terminal pairs get a uniform empirical kernel. ``p_hat_override`` and
    ``radius_scale`` exist for oracle checks (known kernel, collapsed box).
    """

    transition_counts: np.ndarray  # (S, A, S) ints
    cost: np.ndarray  # known cost table (S, A)
    unsafe_mask: np.ndarray
    nonterminal_mask: np.ndarray
    horizon_K: int
    delta: float
    p_hat_override: np.ndarray | None = None
    radius_scale: float = 1.0
    L: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.delta < 0.5:
            raise ValueError("delta must lie in (0, 1/2)")
        if self.horizon_K < 1:
            raise ValueError("horizon_K must be positive")
        nS, nA, _ = self.transition_counts.shape
        object.__setattr__(self, "L", log_term(nS, nA, self.horizon_K, self.delta))

    @classmethod
    def empty(cls, mdp: Mdp, horizon_K: int, delta: float) -> ConfidenceModel:
        return cls(
            transition_counts=np.zeros((mdp.n_states, mdp.n_actions, mdp.n_states), dtype=np.int64),
            cost=np.array(mdp.cost),
            unsafe_mask=mdp.mask(mdp.unsafe),
            nonterminal_mask=mdp.nonterminal_mask,
            horizon_K=horizon_K,
            delta=delta,
        )

    @property
    def shape(self) -> tuple[int, int]:
        nS, nA, _ = self.transition_counts.shape
        return nS, nA

    @cached_property
    def counts(self) -> np.ndarray:
        return self.transition_counts.sum(axis=2)

    @cached_property
    def p_hat(self) -> np.ndarray:
        nS, nA = self.shape
        if self.p_hat_override is not None:
            p = np.array(self.p_hat_override, dtype=float)
            p[~self.nonterminal_mask] = 0.0
            return p
        N = self.counts
        p = self.transition_counts / np.maximum(N, 1)[:, :, None]
        unvisited = (N == 0) & self.nonterminal_mask[:, None]
        p[unvisited] = 1.0 / nS
        p[~self.nonterminal_mask] = 0.0
        return p

    @cached_property
    def eps(self) -> np.ndarray:
        e = self.radius_scale * bernstein_radii(self.p_hat, self.counts[:, :, None], self.L)
        e[~self.nonterminal_mask] = 0.0
        return e

    @cached_property
    def eps_hat(self) -> np.ndarray:
        return self.eps.sum(axis=2)

    @cached_property
    def kappa_hat(self) -> np.ndarray:
        k = self.p_hat[:, :, self.unsafe_mask].sum(axis=2)
        k[self.unsafe_mask] = 0.0
        return k


def bernstein_radius(model: ConfidenceModel, x: int, a: int, y: int) -> float:
    return float(model.eps[x, a, y])


def update_counts(model: ConfidenceModel, traj: Trajectory) -> ConfidenceModel:
    """Return a new model with every step of ``traj`` added to the counts."""
    tc = model.transition_counts.copy()
    for s in traj.steps:
        tc[s.state, s.action, s.next_state] += 1
    return replace(model, transition_counts=tc)


@dataclass(frozen=True)
class LearnerParams:
    p: float
    p_s: float
    t_max: int
    eta: float = 0.1
    alpha: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not 0 <= self.p_s < self.p:
            raise ValueError(f"baseline safety p_s={self.p_s} must lie in [0, p)")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.t_max < 1:
            raise ValueError("t_max must be positive")
        T = self.t_max
        a = 8 * T**2 / (math.log(2 * T / (T + self.eta)) * (self.p - self.p_s))
        object.__setattr__(self, "alpha", a)

    @property
    def bonus_scale(self) -> float:
        """Multiplier of the aggregated radius in the optimistic cost."""
        return 4 * self.t_max / (self.p - self.p_s)


def modified_cost(model: ConfidenceModel, params: LearnerParams, x=None, a=None):
    """Optimistic cost ``c - 4 T_max / (p - p_s) * eps_hat``; whole table if x, a omitted."""
    table = model.cost - params.bonus_scale * model.eps_hat
    if x is None:
        return table
    return float(table[x, a])
