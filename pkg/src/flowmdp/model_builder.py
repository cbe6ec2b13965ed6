"""Ensemble-counted MDP model construction.

For every (time index, action) pair the builder sweeps all (state,
realization) pairs through one kinematic step, accumulates successor counts
in a per-state neighbouring sub-grid, normalizes rewards to sample means,
and reduces the counts to canonical COO probability blocks. Appending the
blocks over time and actions yields the sparse transition model P with its
expected-reward vector R.

The single step routine (:func:`step_flat`) is shared verbatim by the
builder, the dense brute-force oracle and the trajectory rollout, so all
three see bit-identical successor cells and rewards for the same
(state, action, realization, time).

Determinism
-----------
Parallel builds partition work by time index; every task computes its
blocks with fixed-shape array arithmetic and reward sums accumulated in
ascending realization order. Results are assembled by index, never by
completion order, so the emitted model is bit-identical for any worker
count and across reruns.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import multiprocessing

import numpy as np

from .environment import (
    ActionSpace,
    Environment,
    GridSpec,
    reconstruct_timeslice,
    velocity_bound,
    _segments_blocked,
)
from .errors import ContractViolation

OBJECTIVES = ("time", "energy", "net_energy")

# Outcome codes attached to each simulated step (see StepResult.cause).
CAUSE_MOVE = 0              # ordinary in-domain move
CAUSE_TARGET = 1            # landed in the target cell
CAUSE_OUTSIDE = 2           # left the spatial domain
CAUSE_HORIZON = 3           # step would need a time index past the horizon
CAUSE_OBSTACLE_LAND = 4     # landing cell is masked at arrival time
CAUSE_OBSTACLE_TRANSIT = 5  # straight-line path crosses a masked cell


@dataclass(frozen=True)
class RewardConfig:
    """Mission objective and its reward constants.

    ``r_term`` (> 0) is granted once, on the transition that enters the
    target cell. ``r_outbound`` (< 0) replaces the one-step reward whenever
    a transition leaves the domain, runs out the horizon, lands in or cuts
    through an obstacle; pick it well below any legitimate cumulative
    reward so such outcomes are never attractive.
    """

    objective: str
    c_f: float = 1.0
    c_r: float = 1.0
    r_term: float = 100.0
    r_outbound: float = -1000.0

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ContractViolation(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        if not self.r_term > 0:
            raise ContractViolation("r_term must be > 0")
        if not self.r_outbound < 0:
            raise ContractViolation("r_outbound must be < 0")


@dataclass(frozen=True)
class SubGridSpec:
    """Reachable-displacement window around each source cell.

    A displacement of (di, dj) cells maps to slot
    ``(dj + half_width_y) * (2*half_width_x + 1) + (di + half_width_x)``;
    one extra OUT slot per state (index ``n_slots``) absorbs every
    transition whose successor is the SINK state.
    """

    half_width_x: int
    half_width_y: int

    def __post_init__(self) -> None:
        if self.half_width_x < 0 or self.half_width_y < 0:
            raise ContractViolation("sub-grid half widths must be >= 0")

    @property
    def n_slots(self) -> int:
        return (2 * self.half_width_x + 1) * (2 * self.half_width_y + 1)

    @property
    def out_slot(self) -> int:
        return self.n_slots

    def slot_of(self, di: int, dj: int) -> int:
        if abs(di) > self.half_width_x or abs(dj) > self.half_width_y:
            raise ContractViolation(f"displacement ({di},{dj}) outside sub-grid")
        return (dj + self.half_width_y) * (2 * self.half_width_x + 1) + (
            di + self.half_width_x
        )


@dataclass
class SubGridAccumulator:
    """Per-(t, action) sweep output: successor counts and reward sums.

    ``s2_count[s * (n_slots + 1) + slot]`` counts how many realizations sent
    state ``s`` through that displacement slot; ``sum_r[s]`` accumulates the
    one-step rewards over realizations in ascending realization order.
    """

    grid: GridSpec
    subgrid: SubGridSpec
    t: int
    s2_count: np.ndarray
    sum_r: np.ndarray

    @classmethod
    def zeroed(cls, grid: GridSpec, subgrid: SubGridSpec, t: int) -> "SubGridAccumulator":
        n_c = grid.n_cells
        return cls(
            grid=grid,
            subgrid=subgrid,
            t=t,
            s2_count=np.zeros(n_c * (subgrid.n_slots + 1), dtype=np.int64),
            sum_r=np.zeros(n_c, dtype=np.float64),
        )


@dataclass(frozen=True)
class CooBlock:
    """Canonical-order sparse probability block for one (action, time).

    Rows are global source states, cols global successor states (possibly
    SINK), vals the count/N_rv probabilities. Rows ascend; within a row,
    cols ascend. Memory is the classic 3*nnz coordinate layout.
    """

    rows: np.ndarray  # uint32
    cols: np.ndarray  # uint32
    vals: np.ndarray  # float64 in memory; stored as float32 on disk
    nnz: int


@dataclass(frozen=True)
class SparseModel:
    """Appended transition model: COO blocks per (action, time) plus rewards.

    ``blocks[a][t]`` is the CooBlock for action ``a`` at time ``t``;
    ``rewards[a * N_g + s]`` the expected one-step reward. ``n_states``
    includes the absorbing SINK (index N_g) whose implicit self-loop has
    probability 1 and reward 0.
    """

    blocks: list
    rewards: np.ndarray
    n_states: int
    n_actions: int
    nt: int

    @property
    def n_nonsink_states(self) -> int:
        return self.n_states - 1

    def nnz_total(self) -> int:
        return sum(b.nnz for row in self.blocks for b in row)


# ---------------------------------------------------------------------------
# Step context and the shared step routine
# ---------------------------------------------------------------------------

class StepContext:
    """Everything one kinematic step needs, precomputed once.

    Bundles the environment, action set, reward config and target cell with
    derived caches: action vectors, cell centers, per-time obstacle gates.
    The gate at time t marks cells close enough to a masked cell that a
    departing segment could cross it; segments from all other cells skip
    the sampling test entirely (they provably cannot be blocked, because
    the gate radius exceeds the maximum reachable displacement).
    """

    def __init__(
        self,
        env: Environment,
        actions: ActionSpace,
        rcfg: RewardConfig,
        target: tuple[int, int],
    ) -> None:
        grid = env.grid
        ti, tj = int(target[0]), int(target[1])
        if not (0 <= ti < grid.nx and 0 <= tj < grid.ny):
            raise ContractViolation(f"target cell {target} outside grid")
        self.env = env
        self.grid = grid
        self.actions = actions
        self.rcfg = rcfg
        self.target = (ti, tj)
        self.target_cell = tj * grid.nx + ti

        self.act_vecs = actions.vectors()
        self.act_speeds = actions.speeds()
        self.centers = grid.cell_centers()

        bx, by = velocity_bound(env.field)
        reach_x = (bx + actions.f_max) * grid.dt / grid.dx
        reach_y = (by + actions.f_max) * grid.dt / grid.dx
        rx = int(math.ceil(reach_x)) + 1
        ry = int(math.ceil(reach_y)) + 1
        self._near_obstacle = [
            _dilate(env.obstacles.mask[t], rx, ry).reshape(-1)
            if env.obstacles.mask[t].any()
            else None
            for t in range(grid.nt)
        ]
        self._mask_flat = [env.obstacles.mask[t].reshape(-1) for t in range(grid.nt)]
        self._g_flat = [env.scalar.g_mean[t].reshape(-1) for t in range(grid.nt)]
        # Sweep-sized caches, built on first use.
        self._x0_flat = None
        self._cells_flat = None

    def sweep_arrays(self):
        """(start positions, cells, i, j) tiled over (realization, cell)."""
        if self._x0_flat is None:
            n_r = self.env.field.n_realizations
            n_c = self.grid.n_cells
            self._x0_flat = np.tile(self.centers, (n_r, 1))
            cells = np.tile(np.arange(n_c, dtype=np.int32), n_r)
            self._cells_flat = cells
            self._ci_flat = cells % np.int32(self.grid.nx)
            self._cj_flat = cells // np.int32(self.grid.nx)
        return self._x0_flat, self._cells_flat, self._ci_flat, self._cj_flat

    def source_masks(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell (terminal, obstacle) source flags at time t.

        The target cell is terminal at every time index; transitions from
        it carry reward 0. Obstacle source cells carry r_outbound. Both
        kinds transition straight to SINK. Terminal wins when a cell is
        somehow both.
        """
        n_c = self.grid.n_cells
        terminal = np.zeros(n_c, dtype=bool)
        terminal[self.target_cell] = True
        obstacle = self._mask_flat[t] & ~terminal
        return terminal, obstacle


def _dilate(mask: np.ndarray, rx: int, ry: int) -> np.ndarray:
    """Boolean dilation by a (2*ry+1, 2*rx+1) rectangle, zero-padded."""
    ny, nx = mask.shape
    padded = np.zeros((ny + 2 * ry, nx + 2 * rx), dtype=bool)
    padded[ry : ry + ny, rx : rx + nx] = mask
    out = np.zeros_like(mask)
    for dy in range(2 * ry + 1):
        for dx_ in range(2 * rx + 1):
            out |= padded[dy : dy + ny, dx_ : dx_ + nx]
    return out


@dataclass
class StepResult:
    """Vectorized outcome of one kinematic step for a batch of sources."""

    i1: np.ndarray        # landing column index (int32; -1 where horizon)
    j1: np.ndarray        # landing row index
    succ: np.ndarray      # landing flat spatial cell (valid where in-domain)
    to_sink: np.ndarray   # bool: successor is SINK
    reward: np.ndarray    # float64 one-step reward
    cause: np.ndarray | None = None  # int8 CAUSE_* codes, on request


def step_flat(
    ctx: StepContext,
    t: int,
    x0: np.ndarray,
    cells: np.ndarray,
    vels: np.ndarray,
    act_idx,
    want_cause: bool = False,
) -> StepResult:
    """Advance a batch of live sources one step under one or more actions.

    Parameters
    ----------
    x0 : (n, 2) start positions (cell centers of ``cells``).
    cells : (n,) flat spatial source cells at time ``t``.
    vels : (n, 2) flow velocities for the (cell, realization) pairing the
        caller chose; the caller owns realization bookkeeping.
    act_idx : scalar action index, or an (n,) array of per-source actions.

    Sources must be live (neither terminal nor obstacle cells); the sweep
    handles those separately and rollouts never occupy them.

    The step is ``x' = x0 + (v + a) * dt`` followed by cell lookup at
    ``t+1``. Landing in the target adds ``r_term``; leaving the domain,
    exceeding the horizon, landing in a masked cell, or crossing one in
    transit replaces the reward with ``r_outbound`` and sends the
    transition to SINK.
    """
    grid = ctx.grid
    rcfg = ctx.rcfg
    n = cells.shape[0]
    dt = grid.dt

    if t + 1 >= grid.nt:
        fill = np.full(n, -1, dtype=np.int32)
        return StepResult(
            i1=fill,
            j1=fill,
            succ=fill,
            to_sink=np.ones(n, dtype=bool),
            reward=np.full(n, rcfg.r_outbound, dtype=np.float64),
            cause=np.full(n, CAUSE_HORIZON, dtype=np.int8) if want_cause else None,
        )

    avec = ctx.act_vecs[act_idx]
    x1 = x0 + (vels + avec) * dt
    i1 = np.floor((x1[:, 0] - grid.origin[0]) / grid.dx).astype(np.int32)
    j1 = np.floor((x1[:, 1] - grid.origin[1]) / grid.dx).astype(np.int32)
    inb = (i1 >= 0) & (i1 < grid.nx) & (j1 >= 0) & (j1 < grid.ny)
    succ = np.where(inb, j1 * np.int32(grid.nx) + i1, np.int32(0))
    landed_masked = inb & ctx._mask_flat[t + 1][succ]

    blocked = np.zeros(n, dtype=bool)
    near = ctx._near_obstacle[t]
    if near is not None:
        cand = np.flatnonzero(near[cells])
        if cand.size:
            blocked[cand] = _segments_blocked(
                ctx.env.obstacles.mask[t], grid, x0[cand], x1[cand]
            )

    bad = (~inb) | landed_masked | blocked
    hit = inb & ~bad & (succ == ctx.target_cell)

    f = ctx.act_speeds[act_idx]
    if rcfg.objective == "time":
        base = -dt
    elif rcfg.objective == "energy":
        base = -(rcfg.c_f * f * f) * dt
    else:
        g_src = ctx._g_flat[t][cells]
        g_dst = np.where(inb, ctx._g_flat[t + 1][succ], 0.0)
        base = (-(rcfg.c_f * f * f) + 0.5 * rcfg.c_r * g_src + 0.5 * rcfg.c_r * g_dst) * dt
    reward = np.where(hit, base + rcfg.r_term, base)
    reward = np.where(bad, rcfg.r_outbound, reward)

    cause = None
    if want_cause:
        cause = np.where(hit, np.int8(CAUSE_TARGET), np.int8(CAUSE_MOVE))
        cause = np.where(blocked, np.int8(CAUSE_OBSTACLE_TRANSIT), cause)
        cause = np.where(landed_masked, np.int8(CAUSE_OBSTACLE_LAND), cause)
        cause = np.where(~inb, np.int8(CAUSE_OUTSIDE), cause)

    return StepResult(i1=i1, j1=j1, succ=succ, to_sink=bad, reward=reward, cause=cause)


# ---------------------------------------------------------------------------
# Build stages
# ---------------------------------------------------------------------------

def compute_subgrid(
    field, actions: ActionSpace, grid: GridSpec, buffer: int = 1
) -> SubGridSpec:
    """Size the displacement window from the exact flow-speed extremes.

    Scans every (state, realization) pair of the reduced-order field for
    the component-wise maximum speed, adds the maximum action speed, and
    converts to cells with a safety buffer:

        half_width = ceil((max|v_c| + f_max) * dt / dx) + buffer

    which guarantees no in-domain transition can leave the window.
    """
    if buffer < 1:
        raise ContractViolation("buffer must be >= 1")
    vmax_x = 0.0
    vmax_y = 0.0
    for t in range(grid.nt):
        v = reconstruct_timeslice(field, t)
        vmax_x = max(vmax_x, float(np.abs(v[..., 0]).max()))
        vmax_y = max(vmax_y, float(np.abs(v[..., 1]).max()))
    hw_x = int(math.ceil((vmax_x + actions.f_max) * grid.dt / grid.dx)) + buffer
    hw_y = int(math.ceil((vmax_y + actions.f_max) * grid.dt / grid.dx)) + buffer
    return SubGridSpec(half_width_x=hw_x, half_width_y=hw_y)


def transition_sweep(
    ctx: StepContext,
    t: int,
    a_idx: int,
    subgrid: SubGridSpec,
    velocities: np.ndarray | None = None,
) -> SubGridAccumulator:
    """Count successors and sum rewards for all (state, realization) at (t, a).

    ``velocities`` may carry the precomputed (n_realizations, N_c, 2) slice
    for time ``t`` so the expensive reconstruction is shared across the
    actions of one time index; omitting it reconstructs internally.

    Raises ContractViolation if any in-domain displacement falls outside
    the sub-grid: that means the sub-grid was sized for a different field.
    """
    grid = ctx.grid
    n_c = grid.n_cells
    n_r = ctx.env.field.n_realizations
    if velocities is None:
        velocities = reconstruct_timeslice(ctx.env.field, t)
    x0, cells, ci, cj = ctx.sweep_arrays()
    res = step_flat(ctx, t, x0, cells, velocities.reshape(-1, 2), a_idx)

    hx, hy = subgrid.half_width_x, subgrid.half_width_y
    if t + 1 >= grid.nt:
        slot = np.full(n_r * n_c, subgrid.out_slot, dtype=np.int64)
    else:
        di = res.i1 - ci
        dj = res.j1 - cj
        viol = (~res.to_sink) & ((di < -hx) | (di > hx) | (dj < -hy) | (dj > hy))
        if viol.any():
            worst = int(np.argmax(np.abs(di) + np.abs(dj) - 10_000_000 * res.to_sink))
            raise ContractViolation(
                f"displacement ({int(di[worst])},{int(dj[worst])}) at t={t}, a={a_idx} "
                f"exceeds sub-grid half widths ({hx},{hy})"
            )
        slot = np.where(
            res.to_sink,
            np.int64(subgrid.out_slot),
            (dj.astype(np.int64) + hy) * (2 * hx + 1) + (di.astype(np.int64) + hx),
        )

    terminal, obstacle = ctx.source_masks(t)
    dead = terminal | obstacle
    reward = res.reward.reshape(n_r, n_c)
    slot2 = slot.reshape(n_r, n_c)
    if dead.any():
        slot2[:, dead] = subgrid.out_slot
        reward[:, terminal] = 0.0
        reward[:, obstacle] = ctx.rcfg.r_outbound

    acc = SubGridAccumulator.zeroed(grid, subgrid, t)
    lin = cells.astype(np.int64) * (subgrid.n_slots + 1) + slot
    acc.s2_count += np.bincount(lin, minlength=n_c * (subgrid.n_slots + 1))
    for r in range(n_r):  # ascending realization order: fixed float summation
        acc.sum_r += reward[r]
    return acc


def finalize_rewards(acc: SubGridAccumulator, n_realizations: int) -> np.ndarray:
    """Turn reward sums into per-state sample means R_{a,t}[s]."""
    return acc.sum_r / n_realizations


def count_nnz(acc: SubGridAccumulator) -> tuple[int, np.ndarray]:
    """Count nonzero slots per state and in total (COO sizing pass)."""
    counts = acc.s2_count.reshape(acc.grid.n_cells, acc.subgrid.n_slots + 1)
    nnz_count = np.count_nonzero(counts, axis=1)
    return int(nnz_count.sum()), nnz_count


def assemble_coo(
    acc: SubGridAccumulator, nnz_count: np.ndarray, n_realizations: int
) -> CooBlock:
    """Reduce accumulated counts to a canonical COO probability block.

    Slots enumerate displacements row-major in (dj, di), so emitting
    nonzero slots in slot order already yields ascending successor columns
    within each row; the OUT slot maps to SINK, the largest column index,
    and lands last. Probabilities are count / n_realizations.
    """
    grid = acc.grid
    sub = acc.subgrid
    n_c = grid.n_cells
    counts = acc.s2_count.reshape(n_c, sub.n_slots + 1)
    s_idx, slot_idx = np.nonzero(counts)
    if s_idx.size != int(nnz_count.sum()):
        raise ContractViolation("nnz_count inconsistent with accumulator")
    vals = counts[s_idx, slot_idx].astype(np.float64) / n_realizations
    rows = (acc.t * n_c + s_idx).astype(np.uint32)
    width = 2 * sub.half_width_x + 1
    dj = slot_idx // width - sub.half_width_y
    di = slot_idx % width - sub.half_width_x
    succ_sp = (s_idx // grid.nx + dj) * grid.nx + (s_idx % grid.nx + di)
    sink = grid.n_states
    cols = np.where(
        slot_idx == sub.out_slot, sink, (acc.t + 1) * n_c + succ_sp
    ).astype(np.uint32)
    return CooBlock(rows=rows, cols=cols, vals=vals, nnz=int(s_idx.size))


def _timeslice_blocks(ctx: StepContext, subgrid: SubGridSpec, t: int):
    """All four stages for every action at one time index."""
    n_r = ctx.env.field.n_realizations
    velocities = reconstruct_timeslice(ctx.env.field, t)
    blocks = []
    rewards = np.empty((ctx.actions.n_actions, ctx.grid.n_cells), dtype=np.float64)
    for a in range(ctx.actions.n_actions):
        acc = transition_sweep(ctx, t, a, subgrid, velocities)
        rewards[a] = finalize_rewards(acc, n_r)
        _, nnz_count = count_nnz(acc)
        blocks.append(assemble_coo(acc, nnz_count, n_r))
    return blocks, rewards


_WORKER_STATE: tuple | None = None


def _worker_init(ctx: StepContext, subgrid: SubGridSpec) -> None:
    global _WORKER_STATE
    _WORKER_STATE = (ctx, subgrid)


def _worker_timeslice(t: int):
    ctx, subgrid = _WORKER_STATE
    blocks, rewards = _timeslice_blocks(ctx, subgrid, t)
    return t, [(b.rows, b.cols, b.vals, b.nnz) for b in blocks], rewards


def build_model(
    ctx: StepContext, subgrid: SubGridSpec, n_threads: int = 1
) -> SparseModel:
    """Run the full build: every time index (outer), every action (inner).

    ``n_threads`` > 1 distributes time indices over worker processes; the
    output is bit-identical regardless (see module docstring). Blocks are
    appended per action across time, then across actions; rewards are laid
    out action-major, then state.
    """
    grid = ctx.grid
    n_a = ctx.actions.n_actions
    n_c = grid.n_cells
    n_g = grid.n_states
    per_t: list = [None] * grid.nt

    if n_threads <= 1 or grid.nt == 1:
        for t in range(grid.nt):
            per_t[t] = _timeslice_blocks(ctx, subgrid, t)
    else:
        methods = multiprocessing.get_all_start_methods()
        mp_ctx = multiprocessing.get_context(
            "fork" if "fork" in methods else "spawn"
        )
        with ProcessPoolExecutor(
            max_workers=min(n_threads, grid.nt),
            mp_context=mp_ctx,
            initializer=_worker_init,
            initargs=(ctx, subgrid),
        ) as pool:
            for t, raw_blocks, rewards in pool.map(_worker_timeslice, range(grid.nt)):
                per_t[t] = (
                    [CooBlock(rows=r, cols=c, vals=v, nnz=n) for r, c, v, n in raw_blocks],
                    rewards,
                )

    blocks = [[per_t[t][0][a] for t in range(grid.nt)] for a in range(n_a)]
    rewards = np.empty(n_a * n_g, dtype=np.float64)
    for t in range(grid.nt):
        slab = per_t[t][1]
        for a in range(n_a):
            rewards[a * n_g + t * n_c : a * n_g + (t + 1) * n_c] = slab[a]
    return SparseModel(
        blocks=blocks,
        rewards=rewards,
        n_states=n_g + 1,
        n_actions=n_a,
        nt=grid.nt,
    )
