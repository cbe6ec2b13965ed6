"""Policy evaluation by ensemble trajectory rollout.

Each flow realization is simulated forward from the start cell under a
fixed policy, one kinematic step per time index, using the same step
routine as the model builder. A trajectory ends by reaching the target,
leaving the domain, touching an obstacle (landing or transit, both carry
r_outbound, mirroring the model), or running out of time. Realizations are
independent, so the ensemble maps in parallel with ordered collection:
trajectory k always belongs to realization index k regardless of thread
count.

Positions are recorded as cell centers, so a trajectory is a polyline of
the centers of visited cells, ending at the target center for successful
missions.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .environment import reconstruct_at
from .errors import ContractViolation
from .model_builder import (
    CAUSE_HORIZON,
    CAUSE_OBSTACLE_LAND,
    CAUSE_TARGET,
    StepContext,
    step_flat,
)

STATUS_REACHED = "reached_target"
STATUS_OUTBOUND = "outbound"
STATUS_HORIZON = "horizon"

_STATUS_BY_CAUSE = {
    1: STATUS_REACHED,
    2: STATUS_OUTBOUND,
    3: STATUS_HORIZON,
    4: STATUS_OUTBOUND,
    5: STATUS_OUTBOUND,
}

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class Trajectory:
    """One realization's path and outcome.

    ``rows`` holds one tuple per CSV line:
    (step, t, x, y, action, reward, cum_reward, status). Step rows carry
    the departure cell center, the action taken, and the reward received;
    mid-trajectory rows have status "ok" and the final row the terminal
    status. A successful mission appends an arrival row (action -1,
    reward 0) at the target center. ``final_cause`` keeps the raw outcome
    code so obstacle terminations can be told apart from domain exits.
    """

    realization: int
    status: str
    final_cause: int
    rows: list
    cum_reward: float
    n_steps: int
    arrival_t: int | None


@dataclass
class TrajectoryEnsemble:
    """All realizations' trajectories, in realization order."""

    trajectories: list

    def cumulative_rewards(self) -> np.ndarray:
        return np.array([tr.cum_reward for tr in self.trajectories], dtype=np.float64)

    def status_counts(self) -> dict:
        counts = {STATUS_REACHED: 0, STATUS_OUTBOUND: 0, STATUS_HORIZON: 0}
        for tr in self.trajectories:
            counts[tr.status] += 1
        return counts

    def summary(self) -> dict:
        """Aggregate statistics as a JSON-ready dict."""
        cum = self.cumulative_rewards()
        n = cum.size
        std = float(cum.std(ddof=1)) if n > 1 else 0.0
        arrivals = [tr.arrival_t for tr in self.trajectories if tr.arrival_t is not None]
        return {
            "n_trajectories": n,
            "mean_cum_reward": float(cum.mean()),
            "std_cum_reward": std,
            "stderr_cum_reward": std / float(np.sqrt(n)) if n > 0 else 0.0,
            "quantiles_cum_reward": {
                str(q): float(v) for q, v in zip(QUANTILES, np.quantile(cum, QUANTILES))
            },
            "status_counts": self.status_counts(),
            "mean_arrival_t": float(np.mean(arrivals)) if arrivals else None,
            "min_arrival_t": int(min(arrivals)) if arrivals else None,
            "max_arrival_t": int(max(arrivals)) if arrivals else None,
        }


def simulate_trajectory(
    ctx: StepContext, policy: np.ndarray, start: tuple[int, int], realization: int
) -> Trajectory:
    """Follow the policy through one realization's flow from t = 0."""
    grid = ctx.grid
    n_c = grid.n_cells
    si, sj = int(start[0]), int(start[1])
    if not (0 <= si < grid.nx and 0 <= sj < grid.ny):
        raise ContractViolation(f"start cell {start} outside grid")
    cell = sj * grid.nx + si
    rows: list = []
    cum = 0.0
    t = 0

    if ctx._mask_flat[0][cell]:
        x, y = ctx.centers[cell]
        reward = ctx.rcfg.r_outbound
        rows.append((0, 0, float(x), float(y), -1, reward, reward, STATUS_OUTBOUND))
        return Trajectory(
            realization=realization,
            status=STATUS_OUTBOUND,
            final_cause=CAUSE_OBSTACLE_LAND,
            rows=rows,
            cum_reward=reward,
            n_steps=0,
            arrival_t=None,
        )

    cell_arr = np.empty(1, dtype=np.int64)
    real_arr = np.full(1, realization, dtype=np.int64)
    while True:
        action = int(policy[t * n_c + cell])
        cell_arr[0] = cell
        vel = reconstruct_at(ctx.env.field, t, cell_arr, real_arr)
        res = step_flat(
            ctx, t, ctx.centers[cell : cell + 1], cell_arr, vel, action, want_cause=True
        )
        reward = float(res.reward[0])
        cause = int(res.cause[0])
        cum += reward
        x, y = ctx.centers[cell]
        terminal = bool(res.to_sink[0])
        row_status = _STATUS_BY_CAUSE[cause] if terminal else "ok"
        rows.append((len(rows), t, float(x), float(y), action, reward, cum, row_status))
        if cause == CAUSE_TARGET:
            arr_cell = int(res.succ[0])
            ax, ay = ctx.centers[arr_cell]
            rows.append(
                (len(rows), t + 1, float(ax), float(ay), -1, 0.0, cum, STATUS_REACHED)
            )
            return Trajectory(
                realization=realization,
                status=STATUS_REACHED,
                final_cause=cause,
                rows=rows,
                cum_reward=cum,
                n_steps=len(rows) - 1,
                arrival_t=t + 1,
            )
        if terminal:
            return Trajectory(
                realization=realization,
                status=_STATUS_BY_CAUSE[cause],
                final_cause=cause,
                rows=rows,
                cum_reward=cum,
                n_steps=len(rows),
                arrival_t=None,
            )
        cell = int(res.succ[0])
        t += 1


def ensemble_rollout(
    ctx: StepContext,
    policy: np.ndarray,
    start: tuple[int, int],
    n_threads: int = 1,
    realizations=None,
) -> TrajectoryEnsemble:
    """Simulate every realization (or a chosen subset) under one policy.

    Output order equals realization order for any ``n_threads``; threads
    only change wall-clock time, never content.
    """
    grid = ctx.grid
    if policy.shape[0] != grid.n_states:
        raise ContractViolation("policy length must equal the non-sink state count")
    if tuple(start) == ctx.target:
        raise ContractViolation("start cell equals target cell")
    if realizations is None:
        realizations = range(ctx.env.field.n_realizations)
    realizations = list(realizations)

    if n_threads <= 1 or len(realizations) <= 1:
        trajs = [simulate_trajectory(ctx, policy, start, r) for r in realizations]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            trajs = list(
                pool.map(lambda r: simulate_trajectory(ctx, policy, start, r), realizations)
            )
    return TrajectoryEnsemble(trajectories=trajs)
