"""Brute-force reference implementations and the mean-scalar-field check."""

import numpy as np
import pytest

from flowmdp.environment import (
    ActionSpace,
    DOVelocityField,
    Environment,
    GridSpec,
    ObstacleMask,
    ScalarMeanField,
)
from flowmdp.errors import ContractViolation
from flowmdp.model_builder import RewardConfig
from flowmdp.oracle import (
    CAUSE_SOURCE_OBSTACLE,
    CAUSE_SOURCE_TERMINAL,
    ScalarEnsemble,
    dense_build,
    make_scalar_ensemble,
    mc_net_energy_reward,
    naive_vi,
)

from conftest import make_random_env, make_zero_flow_env


NET = RewardConfig(objective="net_energy", c_f=1.0, c_r=0.5, r_term=10.0,
                   r_outbound=-100.0)


def test_scalar_ensemble_mean_matches_field():
    grid = GridSpec(nx=5, ny=4, nt=3, dx=1.0, dt=1.0)
    rng = np.random.default_rng(30)
    scalar = ScalarMeanField(g_mean=rng.uniform(0.0, 2.0, size=(3, 4, 5)))
    for n_k in (2, 16, 64):
        ens = make_scalar_ensemble(scalar, n_k, seed=n_k)
        assert ens.n_samples == n_k
        err = np.abs(ens.samples.mean(axis=0) - scalar.g_mean).max()
        assert err <= 1e-12


def test_scalar_ensemble_single_sample_is_the_mean():
    grid = GridSpec(nx=3, ny=3, nt=2, dx=1.0, dt=1.0)
    scalar = ScalarMeanField(g_mean=np.full((2, 3, 3), 1.25))
    ens = make_scalar_ensemble(scalar, 1, seed=5)
    assert np.array_equal(ens.samples[0], scalar.g_mean)


def test_scalar_ensemble_validation():
    with pytest.raises(ContractViolation):
        ScalarEnsemble(samples=np.zeros((2, 3, 3)))
    with pytest.raises(ContractViolation):
        ScalarEnsemble(samples=np.zeros((0, 2, 3, 3)))
    scalar = ScalarMeanField(g_mean=np.ones((2, 2, 2)))
    with pytest.raises(ContractViolation):
        make_scalar_ensemble(scalar, 0, seed=1)


def test_dense_build_guard_large_grid():
    env = make_zero_flow_env(nx=9, ny=9, nt=3)
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=0.5)
    with pytest.raises(ContractViolation):
        dense_build(env, acts, NET, target=(0, 0))


def test_dense_counts_conserve_realizations(random_env_factory):
    env, acts, rcfg, target = random_env_factory(501)
    dense = dense_build(env, acts, rcfg, target)
    sums = dense.counts.sum(axis=3)
    assert (sums == env.field.n_realizations).all()


def test_dense_zero_flow_self_transitions():
    env = make_zero_flow_env(nx=4, ny=4, nt=3, n_realizations=5)
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=0.125)
    target = (3, 3)
    dense = dense_build(env, acts, NET, target)
    target_cell = 3 * 4 + 3
    for t in range(2):
        for a in range(acts.n_actions):
            for c in range(16):
                if c == target_cell:
                    assert dense.counts[t, a, c, 16] == 5
                else:
                    assert dense.counts[t, a, c, c] == 5


def test_dense_records_source_cause_codes():
    env = make_zero_flow_env(nx=4, ny=4, nt=3, mask_cells=((1, 2),))
    acts = ActionSpace(n_headings=4, n_speeds=1, f_max=0.125)
    dense = dense_build(env, acts, NET, target=(3, 3))
    target_cell = 3 * 4 + 3
    obstacle_cell = 2 * 4 + 1
    assert (dense.cause[:, :, :, target_cell] == CAUSE_SOURCE_TERMINAL).all()
    assert (dense.cause[:, :, :, obstacle_cell] == CAUSE_SOURCE_OBSTACLE).all()
    assert (dense.succ[:, :, :, target_cell] == -1).all()
    assert dense.rewards[0, 0, target_cell] == 0.0
    assert dense.rewards[0, 0, obstacle_cell] == NET.r_outbound


def test_naive_vi_hand_chain():
    env = make_zero_flow_env(nx=3, ny=1, nt=4)
    acts = ActionSpace(n_headings=1, n_speeds=1, f_max=1.0)
    rcfg = RewardConfig(objective="time", r_term=10.0, r_outbound=-50.0)
    dense = dense_build(env, acts, rcfg, target=(2, 0))
    values = naive_vi(dense)
    assert values[0] == 8.0
    assert values[1] == 9.0
    assert values[-1] == 0.0


def test_mean_field_theorem_dyadic_exact():
    """With dyadic constants and a paired +/- delta ensemble, the joint
    Monte-Carlo average equals the mean-field reward bit for bit."""
    nt, ny, nx = 3, 2, 4
    grid = GridSpec(nx=nx, ny=ny, nt=nt, dx=1.0, dt=0.5)
    rng = np.random.default_rng(61)
    # dyadic per-cell means and a dyadic perturbation
    g = rng.integers(0, 8, size=(nt, ny, nx)).astype(np.float64) / 4.0
    delta = 0.25
    samples = np.stack([g + delta, g - delta])
    ens = ScalarEnsemble(samples=samples)
    mean = np.zeros((nt, ny, nx, 2))
    mean[..., 0] = 0.5
    field = DOVelocityField(
        mean=mean, modes=np.zeros((0, nt, ny, nx, 2)), coeffs=np.zeros((nt, 4, 0))
    )
    env = Environment(
        grid=grid,
        field=field,
        scalar=ScalarMeanField(g_mean=g),
        obstacles=ObstacleMask(mask=np.zeros((nt, ny, nx), dtype=bool)),
    )
    acts = ActionSpace(n_headings=4, n_speeds=2, f_max=1.0)
    rcfg = RewardConfig(objective="net_energy", c_f=1.0, c_r=0.5, r_term=8.0,
                        r_outbound=-64.0)
    dense = dense_build(env, acts, rcfg, target=(3, 1))
    for s in range(grid.n_states):
        for a in range(acts.n_actions):
            i, j, t = grid.split_index(s)
            mc = mc_net_energy_reward(ens, dense, s, a, rcfg)
            assert mc == dense.rewards[t, a, j * nx + i]


def test_mean_field_theorem_random_matched_mean(random_env_factory):
    env, acts, _, target = random_env_factory(502)
    rcfg = RewardConfig(objective="net_energy", c_f=1.2, c_r=0.7, r_term=25.0,
                        r_outbound=-150.0)
    dense = dense_build(env, acts, rcfg, target)
    ens = make_scalar_ensemble(env.scalar, 16, seed=99)
    grid = env.grid
    rng = np.random.default_rng(7)
    for _ in range(25):
        s = int(rng.integers(0, grid.n_states))
        a = int(rng.integers(0, acts.n_actions))
        i, j, t = grid.split_index(s)
        mc = mc_net_energy_reward(ens, dense, s, a, rcfg)
        assert abs(mc - dense.rewards[t, a, j * grid.nx + i]) <= 1e-9


def test_mc_reward_objective_guard(random_env_factory):
    env, acts, _, target = random_env_factory(503)
    rcfg = RewardConfig(objective="time")
    dense = dense_build(
        env, acts, RewardConfig(objective="net_energy", c_r=0.5), target
    )
    ens = make_scalar_ensemble(env.scalar, 2, seed=1)
    with pytest.raises(ContractViolation):
        mc_net_energy_reward(ens, dense, 0, 0, rcfg)
