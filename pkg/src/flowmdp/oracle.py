"""Slow, obviously-correct reference implementations.

These exist to check the fast paths, not to be fast themselves: a dense
brute-force model build (full N_c x N_c matrices, no sub-grid), explicit
backward induction over time layers, and a Monte-Carlo estimate of the
expected net-energy one-step reward over a scalar-field sample ensemble.
They are shipped in the package (not buried in tests) so the ``verify``
subcommand can rerun every equivalence check from the command line.

All routines here are single-threaded and deterministic; they serve as the
baseline that parallel builds and solves must reproduce bit-for-bit or
within stated tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .environment import (
    ActionSpace,
    Environment,
    GridSpec,
    ScalarMeanField,
    reconstruct_timeslice,
)
from .errors import ContractViolation
from .model_builder import (
    CAUSE_MOVE,
    CAUSE_TARGET,
    RewardConfig,
    StepContext,
    step_flat,
)

# Extra outcome codes for dead source cells, recorded only by dense_build.
CAUSE_SOURCE_TERMINAL = 6
CAUSE_SOURCE_OBSTACLE = 7

_MAX_DENSE_CELLS = 64


@dataclass(frozen=True)
class ScalarEnsemble:
    """Sample ensemble of the scalar field with a prescribed per-cell mean.

    ``samples[k, t, j, i]`` holds the k-th sample; the mean over k matches
    the generating ScalarMeanField to within floating-point roundoff.
    """

    samples: np.ndarray

    def __post_init__(self) -> None:
        if self.samples.ndim != 4:
            raise ContractViolation("samples must be a [k][t][y][x] array")
        if self.samples.shape[0] < 1:
            raise ContractViolation("need at least one scalar sample")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


def make_scalar_ensemble(
    scalar: ScalarMeanField, n_samples: int, seed: int, scale: float = 0.3
) -> ScalarEnsemble:
    """Draw Gaussian perturbations and recenter them so the per-cell sample
    mean equals the given mean field (up to roundoff)."""
    if n_samples < 1:
        raise ContractViolation("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, scale, size=(n_samples,) + scalar.g_mean.shape)
    noise -= noise.mean(axis=0, keepdims=True)
    return ScalarEnsemble(samples=scalar.g_mean[None] + noise)


@dataclass(frozen=True)
class DenseModel:
    """Brute-force model: dense counts, mean rewards, and per-realization
    outcome records.

    ``counts[t, a, s, c']`` counts realizations sending spatial cell ``s``
    at time t to spatial cell ``c'`` at t+1; column ``n_cells`` is the SINK.
    ``succ[t, a, r, s]`` is the landing cell for one realization (-1 when
    the transition went to SINK) and ``cause[t, a, r, s]`` the CAUSE_* code,
    kept so reward expectations can be re-derived sample by sample.
    """

    grid: GridSpec
    counts: np.ndarray
    rewards: np.ndarray
    succ: np.ndarray
    cause: np.ndarray
    speeds: np.ndarray
    n_realizations: int

    @property
    def nt(self) -> int:
        return self.counts.shape[0]

    @property
    def n_actions(self) -> int:
        return self.counts.shape[1]

    @property
    def n_cells(self) -> int:
        return self.counts.shape[2]


def dense_build(
    env: Environment,
    actions: ActionSpace,
    rcfg: RewardConfig,
    target: tuple[int, int],
) -> DenseModel:
    """Count every (state, realization) outcome into full dense matrices.

    Uses the same step routine as the sparse builder (the point of the
    comparison is the counting and assembly, not the kinematics) but none
    of its sub-grid machinery. Guarded to small grids: the dense tensors
    grow as nt * |A| * N_c^2.
    """
    grid = env.grid
    if grid.n_cells > _MAX_DENSE_CELLS:
        raise ContractViolation(
            f"dense_build is limited to {_MAX_DENSE_CELLS} cells, got {grid.n_cells}"
        )
    ctx = StepContext(env, actions, rcfg, target)
    n_r = env.field.n_realizations
    n_c = grid.n_cells
    n_a = actions.n_actions
    counts = np.zeros((grid.nt, n_a, n_c, n_c + 1), dtype=np.int64)
    rewards = np.zeros((grid.nt, n_a, n_c), dtype=np.float64)
    succ_rec = np.full((grid.nt, n_a, n_r, n_c), -1, dtype=np.int32)
    cause_rec = np.zeros((grid.nt, n_a, n_r, n_c), dtype=np.int8)
    x0, cells, _, _ = ctx.sweep_arrays()
    col_range = np.arange(n_c)

    for t in range(grid.nt):
        vels = reconstruct_timeslice(env.field, t).reshape(-1, 2)
        terminal, obstacle = ctx.source_masks(t)
        dead = terminal | obstacle
        for a in range(n_a):
            res = step_flat(ctx, t, x0, cells, vels, a, want_cause=True)
            reward = res.reward.reshape(n_r, n_c)
            to_sink = res.to_sink.reshape(n_r, n_c)
            succ = res.succ.reshape(n_r, n_c)
            cause = res.cause.reshape(n_r, n_c)
            dcol = np.where(to_sink, n_c, succ)
            dcol[:, dead] = n_c
            reward[:, terminal] = 0.0
            reward[:, obstacle] = rcfg.r_outbound
            cause[:, terminal] = CAUSE_SOURCE_TERMINAL
            cause[:, obstacle] = CAUSE_SOURCE_OBSTACLE
            for r in range(n_r):  # ascending order, matching the sparse build
                counts[t, a, col_range, dcol[r]] += 1
                rewards[t, a] += reward[r]
            rewards[t, a] /= n_r
            succ_rec[t, a] = np.where(dcol == n_c, -1, succ)
            cause_rec[t, a] = cause
    return DenseModel(
        grid=grid,
        counts=counts,
        rewards=rewards,
        succ=succ_rec,
        cause=cause_rec,
        speeds=actions.speeds(),
        n_realizations=n_r,
    )


def naive_vi(dense: DenseModel) -> np.ndarray:
    """Exact finite-horizon dynamic programming on the dense model.

    Walks time layers backward; each layer's value is the best action's
    expected reward plus probability-weighted successor values. Returns
    values for all global states plus the SINK (last entry, 0).
    """
    grid = dense.grid
    n_c = dense.n_cells
    values = np.zeros(grid.n_states + 1, dtype=np.float64)
    v_next = np.zeros(n_c + 1, dtype=np.float64)  # layer t+1 plus SINK col
    for t in range(dense.nt - 1, -1, -1):
        probs = dense.counts[t].astype(np.float64) / dense.n_realizations
        q = dense.rewards[t] + probs @ v_next
        v_layer = q.max(axis=0)
        values[t * n_c : (t + 1) * n_c] = v_layer
        v_next = np.append(v_layer, 0.0)
    return values


def naive_greedy_q(dense: DenseModel) -> np.ndarray:
    """Q[t, a, s] at the oracle's optimal values, for argmax cross-checks."""
    grid = dense.grid
    n_c = dense.n_cells
    values = naive_vi(dense)
    q_all = np.empty((dense.nt, dense.n_actions, n_c), dtype=np.float64)
    for t in range(dense.nt):
        if t + 1 < dense.nt:
            v_next = np.append(values[(t + 1) * n_c : (t + 2) * n_c], 0.0)
        else:
            v_next = np.zeros(n_c + 1, dtype=np.float64)
        probs = dense.counts[t].astype(np.float64) / dense.n_realizations
        q_all[t] = dense.rewards[t] + probs @ v_next
    return q_all


def mc_net_energy_reward(
    ensemble: ScalarEnsemble, dense: DenseModel, s: int, a: int, rcfg: RewardConfig
) -> float:
    """Average the net-energy one-step reward over every (flow realization,
    scalar sample) pair for global state ``s`` under action ``a``.

    The estimate uses the actual per-realization successors recorded by
    dense_build, so it is the empirical joint expectation. When the
    per-cell sample mean of the ensemble equals the mean scalar field,
    this agrees with the mean-field reward the builder stores, which is
    what justifies keeping only the mean field.
    """
    if rcfg.objective != "net_energy":
        raise ContractViolation("mc_net_energy_reward applies to the net_energy objective")
    grid = dense.grid
    i, j, t = grid.split_index(s)
    c = j * grid.nx + i
    n_k = ensemble.n_samples
    n_r = dense.n_realizations
    g_flat = ensemble.samples.reshape(n_k, grid.nt, grid.n_cells)
    f = float(dense.speeds[a])
    dt = grid.dt
    total = 0.0
    for r in range(n_r):
        code = int(dense.cause[t, a, r, c])
        if code == CAUSE_SOURCE_TERMINAL:
            total += 0.0 * n_k
        elif code in (CAUSE_MOVE, CAUSE_TARGET):
            sp = int(dense.succ[t, a, r, c])
            for k in range(n_k):
                val = (
                    -(rcfg.c_f * f * f)
                    + rcfg.c_r * (g_flat[k, t, c] + g_flat[k, t + 1, sp]) / 2.0
                ) * dt
                if code == CAUSE_TARGET:
                    val += rcfg.r_term
                total += val
        else:
            total += rcfg.r_outbound * n_k
    return total / (n_r * n_k)


def densify_sparse(model, grid: GridSpec) -> np.ndarray:
    """Expand a sparse model's COO blocks to dense [t][a][s][c'] probabilities.

    Columns mirror the dense oracle layout: spatial successor cells at
    t+1, with the last column standing for SINK. Used to compare the
    sparse builder's output against dense_build entry by entry.
    """
    n_c = grid.n_cells
    nt = model.nt
    dense = np.zeros((nt, model.n_actions, n_c, n_c + 1), dtype=np.float64)
    sink = grid.n_states
    for a in range(model.n_actions):
        for t in range(nt):
            b = model.blocks[a][t]
            rows = b.rows.astype(np.int64) - t * n_c
            cols = np.where(
                b.cols.astype(np.int64) == sink,
                n_c,
                b.cols.astype(np.int64) - (t + 1) * n_c,
            )
            if (rows < 0).any() or (rows >= n_c).any():
                raise ContractViolation(f"block (a={a}, t={t}) has rows outside layer t")
            if (cols < 0).any() or (cols > n_c).any():
                raise ContractViolation(
                    f"block (a={a}, t={t}) has cols outside layer t+1 and SINK"
                )
            dense[t, a, rows, cols] += b.vals
    return dense


def velocity_by_loop(field, s: int, r: int) -> np.ndarray:
    """Reconstruct one velocity with explicit scalar loops over modes."""
    nt, ny, nx = field.mean.shape[:3]
    t, rem = divmod(s, ny * nx)
    j, i = divmod(rem, nx)
    u = float(field.mean[t, j, i, 0])
    v = float(field.mean[t, j, i, 1])
    for m in range(field.n_modes):
        u += float(field.coeffs[t, r, m]) * float(field.modes[m, t, j, i, 0])
        v += float(field.coeffs[t, r, m]) * float(field.modes[m, t, j, i, 1])
    return np.array([u, v], dtype=np.float64)
