"""Backward-value computation on the sparse time-expanded model.

The transition graph is a DAG: every transition goes from time t to t+1 or
to the absorbing SINK, so undiscounted total reward is finite and
Jacobi-style value iteration converges exactly (residual 0.0) in at most
nt + 1 sweeps. Each sweep evaluates

    Q[a] = R[a] + P[a] @ v        (sparse gather, bincount scatter)
    v'   = max_a Q[a],  greedy action = lowest maximizing index

with double buffering: every sweep reads the previous iterate only, so the
result is independent of state visiting order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .model_builder import SparseModel


@dataclass(frozen=True)
class SolverConfig:
    """Iteration controls. ``max_iterations`` None means nt + 2, enough
    for exact convergence on any model with a DAG time structure."""

    epsilon: float = 1e-8
    max_iterations: int | None = None

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ContractViolation("epsilon must be > 0")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ContractViolation("max_iterations must be >= 1")


@dataclass(frozen=True)
class PolicyValue:
    """Solver output: optimal values, greedy policy, convergence report.

    ``values`` has n_states entries (SINK last, pinned to 0);
    ``actions`` covers the n_states - 1 non-sink states.
    """

    values: np.ndarray
    actions: np.ndarray
    iterations_run: int
    residual: float
    converged: bool


def _per_action_triplets(model: SparseModel):
    """Concatenate each action's blocks over time into one triplet set."""
    out = []
    for a in range(model.n_actions):
        rows = np.concatenate([b.rows for b in model.blocks[a]])
        cols = np.concatenate([b.cols for b in model.blocks[a]])
        vals = np.concatenate([b.vals for b in model.blocks[a]])
        out.append((rows.astype(np.int64), cols.astype(np.int64), vals))
    return out


def _q_values(model: SparseModel, triplets, v: np.ndarray) -> np.ndarray:
    """Q[a, s] = R[a, s] + sum_s' P[a][s, s'] * v[s'] for non-sink states."""
    n_g = model.n_states - 1
    q = model.rewards.reshape(model.n_actions, n_g).copy()
    for a, (rows, cols, vals) in enumerate(triplets):
        q[a] += np.bincount(rows, weights=vals * v[cols], minlength=n_g)
    return q


def value_iteration(model: SparseModel, config: SolverConfig = SolverConfig()) -> PolicyValue:
    """Iterate Bellman backups to the fixed point; report convergence.

    Stops when the max-norm residual drops below ``config.epsilon``; this
    happens with residual exactly 0.0 once every time layer has stabilized,
    because a repeated sweep recomputes bit-identical maxima. Hitting the
    iteration cap first is reported via ``converged=False`` with the last
    residual, never silently.
    """
    n_g = model.n_states - 1
    triplets = _per_action_triplets(model)
    max_iter = config.max_iterations if config.max_iterations is not None else model.nt + 2

    v = np.zeros(model.n_states, dtype=np.float64)
    residual = float("inf")
    iterations = 0
    for _ in range(max_iter):
        q = _q_values(model, triplets, v)
        v_new = np.zeros(model.n_states, dtype=np.float64)
        v_new[:n_g] = q.max(axis=0)
        iterations += 1
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < config.epsilon:
            break
    converged = residual < config.epsilon
    q = _q_values(model, triplets, v)
    actions = np.argmax(q, axis=0).astype(np.uint16)
    return PolicyValue(
        values=v,
        actions=actions,
        iterations_run=iterations,
        residual=residual,
        converged=converged,
    )


def extract_policy(model: SparseModel, values: np.ndarray) -> np.ndarray:
    """Greedy action per non-sink state at the given values (ties break to
    the lowest action index, matching np.argmax)."""
    if values.shape[0] != model.n_states:
        raise ContractViolation("values length must equal n_states")
    triplets = _per_action_triplets(model)
    q = _q_values(model, triplets, values)
    return np.argmax(q, axis=0).astype(np.uint16)


def policy_value(
    model: SparseModel, policy: np.ndarray, config: SolverConfig = SolverConfig()
) -> np.ndarray:
    """Expected cumulative reward of a fixed policy from every state.

    Filters each action's triplets to rows the policy assigns that action,
    then iterates the single-policy backup to its exact fixed point.
    """
    n_g = model.n_states - 1
    if policy.shape[0] != n_g:
        raise ContractViolation("policy length must equal n_states - 1")
    rows_l, cols_l, vals_l, rew = [], [], [], np.empty(n_g, dtype=np.float64)
    rewards = model.rewards.reshape(model.n_actions, n_g)
    for a in range(model.n_actions):
        sel_states = policy == a
        rew[sel_states] = rewards[a, sel_states]
        rows = np.concatenate([b.rows for b in model.blocks[a]]).astype(np.int64)
        keep = sel_states[rows]
        rows_l.append(rows[keep])
        cols_l.append(
            np.concatenate([b.cols for b in model.blocks[a]]).astype(np.int64)[keep]
        )
        vals_l.append(np.concatenate([b.vals for b in model.blocks[a]])[keep])
    rows = np.concatenate(rows_l)
    cols = np.concatenate(cols_l)
    vals = np.concatenate(vals_l)

    max_iter = config.max_iterations if config.max_iterations is not None else model.nt + 2
    v = np.zeros(model.n_states, dtype=np.float64)
    for _ in range(max_iter):
        v_new = np.zeros(model.n_states, dtype=np.float64)
        v_new[:n_g] = rew + np.bincount(rows, weights=vals * v[cols], minlength=n_g)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < config.epsilon:
            break
    return v
