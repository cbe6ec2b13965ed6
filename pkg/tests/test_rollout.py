"""Trajectory simulation and ensemble statistics under a fixed policy."""

import numpy as np
import pytest

from flowmdp.environment import ActionSpace
from flowmdp.errors import ContractViolation
from flowmdp.model_builder import (
    CAUSE_HORIZON,
    CAUSE_OBSTACLE_LAND,
    RewardConfig,
    StepContext,
    build_model,
    compute_subgrid,
)
from flowmdp.rollout import (
    STATUS_HORIZON,
    STATUS_OUTBOUND,
    STATUS_REACHED,
    ensemble_rollout,
    simulate_trajectory,
)
from flowmdp.solver import policy_value, value_iteration

from conftest import make_zero_flow_env


TIME = RewardConfig(objective="time", r_term=10.0, r_outbound=-100.0)


def _east_policy(grid):
    # heading 0 is east when actions are laid out a = h * n_speeds + k
    return np.zeros(grid.n_states, dtype=np.uint16)


def test_one_step_arrival():
    env = make_zero_flow_env(nx=3, ny=1, nt=4)
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=1.0)
    ctx = StepContext(env, acts, TIME, target=(1, 0))
    traj = simulate_trajectory(ctx, _east_policy(env.grid), start=(0, 0), realization=0)
    assert traj.status == STATUS_REACHED
    assert traj.cum_reward == -env.grid.dt + TIME.r_term
    assert traj.n_steps == 1
    assert traj.arrival_t == 1
    # the arrival marker row ends the record at the target's center
    step_row, arrival_row = traj.rows
    assert step_row[7] == "ok" or step_row[7] == STATUS_REACHED
    assert arrival_row[4] == -1
    assert arrival_row[5] == 0.0
    assert arrival_row[7] == STATUS_REACHED
    assert arrival_row[2] == ctx.centers[1][0]


def test_policy_into_obstacle():
    env = make_zero_flow_env(nx=3, ny=1, nt=4, mask_cells=((1, 0),))
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=1.0)
    ctx = StepContext(env, acts, TIME, target=(2, 0))
    traj = simulate_trajectory(ctx, _east_policy(env.grid), start=(0, 0), realization=0)
    assert traj.status == STATUS_OUTBOUND
    assert traj.final_cause == CAUSE_OBSTACLE_LAND
    assert traj.cum_reward == TIME.r_outbound
    assert traj.n_steps == 1


def test_start_inside_obstacle_is_immediately_outbound():
    env = make_zero_flow_env(nx=3, ny=1, nt=4, mask_cells=((0, 0),))
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=1.0)
    ctx = StepContext(env, acts, TIME, target=(2, 0))
    traj = simulate_trajectory(ctx, _east_policy(env.grid), start=(0, 0), realization=0)
    assert traj.status == STATUS_OUTBOUND
    assert traj.n_steps == 0
    assert traj.cum_reward == TIME.r_outbound
    assert len(traj.rows) == 1


def test_unreachable_target_runs_out_the_horizon():
    env = make_zero_flow_env(nx=4, ny=4, nt=5)
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=0.125)
    ctx = StepContext(env, acts, TIME, target=(3, 3))
    traj = simulate_trajectory(ctx, _east_policy(env.grid), start=(0, 0), realization=0)
    assert traj.status == STATUS_HORIZON
    assert traj.final_cause == CAUSE_HORIZON
    assert traj.n_steps == env.grid.nt
    assert traj.arrival_t is None


def test_rows_are_consistent():
    env = make_zero_flow_env(nx=6, ny=2, nt=6)
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=1.0)
    ctx = StepContext(env, acts, TIME, target=(5, 0))
    traj = simulate_trajectory(ctx, _east_policy(env.grid), start=(0, 0), realization=2)
    cum = 0.0
    for k, row in enumerate(traj.rows):
        step, t, x, y, action, reward, running, status = row
        assert step == k
        assert t == k  # one time layer per step from t = 0
        cum += reward
        assert running == pytest.approx(cum, abs=1e-12)
    statuses = [row[7] for row in traj.rows]
    assert all(s == "ok" for s in statuses[:-1])
    assert statuses[-1] == traj.status


def test_deterministic_env_identical_trajectories(tiny_env):
    from flowmdp.environment import DOVelocityField, Environment

    frozen = Environment(
        grid=tiny_env.grid,
        field=DOVelocityField(
            mean=tiny_env.field.mean,
            modes=tiny_env.field.modes,
            coeffs=np.zeros_like(tiny_env.field.coeffs),
        ),
        scalar=tiny_env.scalar,
        obstacles=tiny_env.obstacles,
    )
    acts = ActionSpace(n_headings=8, n_speeds=2, f_max=1.0)
    rcfg = RewardConfig(objective="time", r_term=100.0, r_outbound=-300.0)
    ctx = StepContext(frozen, acts, rcfg, target=(4, 4))
    model = build_model(ctx, compute_subgrid(frozen.field, acts, frozen.grid))
    pv = value_iteration(model)
    ens = ensemble_rollout(ctx, pv.actions, start=(1, 1))
    first = ens.trajectories[0]
    for traj in ens.trajectories[1:]:
        assert traj.rows == first.rows
        assert traj.cum_reward == first.cum_reward


def test_ensemble_order_and_thread_invariance(tiny_env):
    acts = ActionSpace(n_headings=8, n_speeds=2, f_max=1.0)
    rcfg = RewardConfig(objective="time", r_term=100.0, r_outbound=-300.0)
    ctx = StepContext(tiny_env, acts, rcfg, target=(4, 4))
    model = build_model(ctx, compute_subgrid(tiny_env.field, acts, tiny_env.grid))
    pv = value_iteration(model)
    one = ensemble_rollout(ctx, pv.actions, start=(1, 1), n_threads=1)
    three = ensemble_rollout(ctx, pv.actions, start=(1, 1), n_threads=3)
    n_r = tiny_env.field.n_realizations
    assert [tr.realization for tr in one.trajectories] == list(range(n_r))
    assert one.summary() == three.summary()
    for a, b in zip(one.trajectories, three.trajectories):
        assert a.rows == b.rows
    assert all(tr.n_steps <= tiny_env.grid.nt for tr in one.trajectories)


def test_rollout_matches_policy_value_within_two_se(tiny_env):
    acts = ActionSpace(n_headings=8, n_speeds=2, f_max=1.0)
    start, target = (1, 1), (4, 4)
    for objective in ("time", "energy", "net_energy"):
        rcfg = RewardConfig(
            objective=objective, c_f=1.0, c_r=0.5, r_term=100.0, r_outbound=-300.0
        )
        ctx = StepContext(tiny_env, acts, rcfg, target)
        model = build_model(ctx, compute_subgrid(tiny_env.field, acts, tiny_env.grid))
        pv = value_iteration(model)
        ens = ensemble_rollout(ctx, pv.actions, start=start)
        stats = ens.summary()
        start_state = start[1] * tiny_env.grid.nx + start[0]
        expected = policy_value(model, pv.actions)[start_state]
        gap = abs(stats["mean_cum_reward"] - expected)
        slack = 2.0 * stats["stderr_cum_reward"]
        assert gap <= slack or gap <= 1e-9, (objective, gap, slack)


def test_summary_shape(tiny_env):
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=1.0)
    rcfg = RewardConfig(objective="time", r_term=100.0, r_outbound=-300.0)
    ctx = StepContext(tiny_env, acts, rcfg, target=(4, 4))
    ens = ensemble_rollout(ctx, np.zeros(tiny_env.grid.n_states, dtype=np.uint16),
                           start=(0, 0))
    stats = ens.summary()
    assert stats["n_trajectories"] == tiny_env.field.n_realizations
    assert sum(stats["status_counts"].values()) == stats["n_trajectories"]
    assert set(stats["quantiles_cum_reward"]) == {"0.05", "0.25", "0.5", "0.75", "0.95"}
    assert stats["stderr_cum_reward"] >= 0.0


def test_rollout_input_validation(tiny_env):
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=1.0)
    rcfg = RewardConfig(objective="time", r_term=100.0, r_outbound=-300.0)
    ctx = StepContext(tiny_env, acts, rcfg, target=(4, 4))
    good = np.zeros(tiny_env.grid.n_states, dtype=np.uint16)
    with pytest.raises(ContractViolation):
        ensemble_rollout(ctx, good[:-1], start=(0, 0))
    with pytest.raises(ContractViolation):
        ensemble_rollout(ctx, good, start=(4, 4))
    with pytest.raises(ContractViolation):
        simulate_trajectory(ctx, good, start=(9, 0), realization=0)
