"""Optimistic joint planning over (policy, initial distribution, drift, reward)
candidates, plus the high-precision oracle used to score suboptimality.

The planner evaluates every candidate tuple by Monte-Carlo Riemann sums under
one shared noise bundle (common random numbers): a single Wiener-increment
array and per-initial-distribution state draws are reused across all
candidates within a call, so the argmax is a deterministic function of one
sampled bundle and optimism at the truth holds as an exact inequality
whenever the truth is among the candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .sde import (
    DynamicsSpec,
    TAG_INIT,
    TAG_WIENER,
    initial_states,
    riemann_returns,
    simulate_paths,
    substream,
    wiener_increments,
)

__all__ = [
    "CandidateGrid",
    "OptimisticChoice",
    "OptimalityOracle",
    "PlannerStarvationError",
    "optimistic_plan",
    "exact_optimal",
]


class PlannerStarvationError(RuntimeError):
    """No candidates to plan over; usually a sign of misconfigured radii."""


@dataclass(frozen=True)
class CandidateGrid:
    """Finite policy and initial-distribution grids searched exhaustively."""

    policies: tuple
    initial_dists: tuple

    def __post_init__(self):
        if not self.policies or not self.initial_dists:
            raise ValueError("candidate grid must be non-empty")


@dataclass(frozen=True)
class OptimisticChoice:
    policy_id: int
    q_id: int
    f_index: int
    b_index: int
    f: Callable
    b: Callable
    value: float


@dataclass(frozen=True)
class OptimalityOracle:
    """True returns of every (policy, q) pair under the real drift and reward."""

    values: np.ndarray   # (n_policies, n_qs)
    stderrs: np.ndarray
    optimal_value: float
    best_policy_id: int
    best_q_id: int
    policy_ids: tuple
    q_ids: tuple

    def value_of(self, policy_id: int, q_id: int) -> float:
        return float(self.values[self.policy_ids.index(policy_id),
                                 self.q_ids.index(q_id)])

    def stderr_of(self, policy_id: int, q_id: int) -> float:
        return float(self.stderrs[self.policy_ids.index(policy_id),
                                  self.q_ids.index(q_id)])

    def suboptimality(self, policy_id: int, q_id: int) -> float:
        return self.optimal_value - self.value_of(policy_id, q_id)


def _reward_matrix(
    spec: DynamicsSpec,
    states: np.ndarray,
    controls: np.ndarray,
    b_members: Sequence[Callable],
    dt: float,
) -> np.ndarray:
    """Mean return of each reward candidate along one batch of paths."""
    out = np.empty(len(b_members))
    for i, b in enumerate(b_members):
        model = replace(spec, reward=b)
        out[i] = riemann_returns(model, states, controls, dt).mean()
    return out


def optimistic_plan(
    spec: DynamicsSpec,
    grid: CandidateGrid,
    f_members: Sequence[Callable],
    b_members: Sequence[Callable],
    dt: float,
    n_rollouts: int,
    seed: int,
    f_indices: Sequence[int] | None = None,
    b_indices: Sequence[int] | None = None,
) -> OptimisticChoice:
    """Exhaustive optimistic argmax over the candidate product grid.

    Dynamics are simulated once per (policy, q, drift) triple and every reward
    candidate is integrated along those paths.  Ties break lexicographically
    on (policy_id, q_id, drift position, reward position): a later candidate
    replaces the incumbent only on a strictly larger value.
    """
    if len(f_members) == 0 or len(b_members) == 0:
        raise PlannerStarvationError("empty confidence set handed to the planner")
    f_indices = tuple(f_indices) if f_indices is not None else tuple(range(len(f_members)))
    b_indices = tuple(b_indices) if b_indices is not None else tuple(range(len(b_members)))
    k = spec.grid_steps(dt)
    dw = wiener_increments(substream(seed, TAG_WIENER), n_rollouts, k, spec.state_dim, dt)
    x0_by_q = {
        q.id: initial_states(q, substream(seed, TAG_INIT, q.id), n_rollouts)
        for q in grid.initial_dists
    }
    best: OptimisticChoice | None = None
    for policy in grid.policies:
        for q in grid.initial_dists:
            x0 = x0_by_q[q.id]
            for fi, f in zip(f_indices, f_members):
                model = replace(spec, drift=f)
                states, controls = simulate_paths(model, policy, x0, dw, dt)
                values = _reward_matrix(spec, states, controls, b_members, dt)
                for pos, (bi, value) in enumerate(zip(b_indices, values)):
                    if best is None or value > best.value:
                        best = OptimisticChoice(
                            policy_id=policy.id, q_id=q.id,
                            f_index=fi, b_index=bi,
                            f=f, b=b_members[pos],
                            value=float(value),
                        )
    return best


def exact_optimal(
    spec: DynamicsSpec,
    grid: CandidateGrid,
    dt: float,
    n_rollouts: int = 10_000,
    seed: int = 0,
) -> OptimalityOracle:
    """High-precision returns of every (policy, q) pair under the true model.

    With zero diffusion and deterministic initial draws the estimate is exact
    for any rollout count; stochastic environments should keep the default
    10^4 rollouts so oracle noise stays negligible next to planning noise.
    """
    k = spec.grid_steps(dt)
    n_p = len(grid.policies)
    n_q = len(grid.initial_dists)
    values = np.empty((n_p, n_q))
    stderrs = np.empty((n_p, n_q))
    dw = wiener_increments(substream(seed, TAG_WIENER), n_rollouts, k, spec.state_dim, dt)
    for j, q in enumerate(grid.initial_dists):
        x0 = initial_states(q, substream(seed, TAG_INIT, q.id), n_rollouts)
        for i, policy in enumerate(grid.policies):
            states, controls = simulate_paths(spec, policy, x0, dw, dt)
            rets = riemann_returns(spec, states, controls, dt)
            values[i, j] = rets.mean()
            stderrs[i, j] = rets.std(ddof=1) / np.sqrt(n_rollouts) if n_rollouts > 1 else 0.0
    best_flat = int(np.argmax(values))
    bi, bj = np.unravel_index(best_flat, values.shape)
    return OptimalityOracle(
        values=values,
        stderrs=stderrs,
        optimal_value=float(values[bi, bj]),
        best_policy_id=grid.policies[bi].id,
        best_q_id=grid.initial_dists[bj].id,
        policy_ids=tuple(p.id for p in grid.policies),
        q_ids=tuple(q.id for q in grid.initial_dists),
    )
