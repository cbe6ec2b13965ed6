"""Grid geometry, field reconstruction, obstacle queries, storage accounting."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmdp.environment import (
    OUTSIDE,
    ActionSpace,
    DOVelocityField,
    GridSpec,
    ObstacleMask,
    cell_of,
    reconstruct_at,
    reconstruct_timeslice,
    reconstruct_velocity,
    segment_blocked,
    storage_footprint,
    velocity_bound,
)
from flowmdp.errors import ContractViolation
from flowmdp.oracle import velocity_by_loop

from conftest import make_tiny_env


def test_grid_counts_and_sink():
    grid = GridSpec(nx=4, ny=3, nt=5, dx=1.0, dt=1.0)
    assert grid.n_cells == 12
    assert grid.n_states == 60
    assert grid.sink == 60


def test_state_index_round_trip():
    grid = GridSpec(nx=4, ny=3, nt=5, dx=0.5, dt=2.0)
    seen = set()
    for t in range(grid.nt):
        for j in range(grid.ny):
            for i in range(grid.nx):
                s = grid.state_index(i, j, t)
                assert grid.split_index(s) == (i, j, t)
                seen.add(s)
    assert seen == set(range(grid.n_states))


def test_state_index_rejects_out_of_range():
    grid = GridSpec(nx=4, ny=3, nt=5, dx=1.0, dt=1.0)
    with pytest.raises(ContractViolation):
        grid.state_index(4, 0, 0)
    with pytest.raises(ContractViolation):
        grid.state_index(0, 0, 5)


def test_invalid_grid_dims_rejected():
    with pytest.raises(ContractViolation):
        GridSpec(nx=0, ny=3, nt=5, dx=1.0, dt=1.0)
    with pytest.raises(ContractViolation):
        GridSpec(nx=4, ny=3, nt=5, dx=-1.0, dt=1.0)


def test_cell_of_corner_and_boundary():
    grid = GridSpec(nx=3, ny=3, nt=2, dx=1.0, dt=1.0, origin=(10.0, -2.0))
    assert cell_of(grid, (10.0, -2.0), 0) == 0
    # a position exactly on a cell's upper edge belongs to the next cell
    assert cell_of(grid, (11.0, -2.0), 0) == 1
    assert cell_of(grid, (9.999, -2.0), 0) == OUTSIDE
    assert cell_of(grid, (10.5, -2.0 + 3.0), 0) == OUTSIDE
    assert cell_of(grid, (10.5, -1.5), 2) == OUTSIDE


def test_cell_of_time_layer_offset():
    grid = GridSpec(nx=3, ny=2, nt=4, dx=1.0, dt=1.0)
    pos = grid.cell_center(2, 1)
    assert cell_of(grid, pos, 3) == 3 * 6 + 1 * 3 + 2


@given(
    s=st.integers(min_value=0, max_value=4 * 3 * 5 - 1),
)
@settings(max_examples=60, deadline=None)
def test_cell_center_round_trip(s):
    grid = GridSpec(nx=4, ny=3, nt=5, dx=0.75, dt=0.5, origin=(-1.25, 2.0))
    i, j, t = grid.split_index(s)
    assert cell_of(grid, grid.center_of(s), t) == s
    center = grid.cell_center(i, j)
    assert np.allclose(center, grid.center_of(s))


def test_cell_centers_match_scalar_queries():
    grid = GridSpec(nx=3, ny=4, nt=2, dx=2.0, dt=1.0, origin=(1.0, -1.0))
    centers = grid.cell_centers()
    assert centers.shape == (12, 2)
    for j in range(grid.ny):
        for i in range(grid.nx):
            assert np.array_equal(centers[j * grid.nx + i], grid.cell_center(i, j))


def _random_field(rng, nt=3, ny=3, nx=4, n_modes=3, n_real=5):
    return DOVelocityField(
        mean=rng.normal(size=(nt, ny, nx, 2)),
        modes=rng.normal(size=(n_modes, nt, ny, nx, 2)),
        coeffs=rng.normal(size=(nt, n_real, n_modes)),
    )


def test_reconstruct_velocity_zero_coeffs_gives_mean():
    rng = np.random.default_rng(0)
    field = _random_field(rng)
    zeroed = DOVelocityField(
        mean=field.mean, modes=field.modes, coeffs=np.zeros_like(field.coeffs)
    )
    grid = GridSpec(nx=4, ny=3, nt=3, dx=1.0, dt=1.0)
    for s in (0, 7, grid.n_states - 1):
        i, j, t = grid.split_index(s)
        assert np.array_equal(reconstruct_velocity(zeroed, s, 2), field.mean[t, j, i])


def test_reconstruct_velocity_single_mode_by_hand():
    mean = np.zeros((1, 1, 1, 2))
    mean[0, 0, 0] = (1.0, 0.0)
    modes = np.zeros((1, 1, 1, 1, 2))
    modes[0, 0, 0, 0] = (0.5, -0.5)
    coeffs = np.full((1, 1, 1), 2.0)
    field = DOVelocityField(mean=mean, modes=modes, coeffs=coeffs)
    assert np.array_equal(reconstruct_velocity(field, 0, 0), [2.0, -1.0])


def test_reconstruct_velocity_matches_scalar_loop():
    rng = np.random.default_rng(3)
    field = _random_field(rng)
    for s in range(3 * 3 * 4):
        for r in range(5):
            assert np.array_equal(
                reconstruct_velocity(field, s, r), velocity_by_loop(field, s, r)
            )


def test_reconstruct_velocity_rejects_bad_indices():
    rng = np.random.default_rng(4)
    field = _random_field(rng)
    with pytest.raises(ContractViolation):
        reconstruct_velocity(field, 3 * 3 * 4, 0)
    with pytest.raises(ContractViolation):
        reconstruct_velocity(field, 0, 5)


def test_reconstruct_velocity_linear_in_coeffs():
    rng = np.random.default_rng(5)
    field = _random_field(rng)
    doubled = DOVelocityField(
        mean=field.mean, modes=field.modes, coeffs=2.0 * field.coeffs
    )
    s, r = 10, 3
    v1 = reconstruct_velocity(field, s, r)
    v2 = reconstruct_velocity(doubled, s, r)
    i, j, t = GridSpec(nx=4, ny=3, nt=3, dx=1.0, dt=1.0).split_index(s)
    mode_sum = np.einsum("m,mc->c", field.coeffs[t, r], field.modes[:, t, j, i])
    assert np.allclose(v2 - v1, mode_sum, atol=1e-12)


def test_reconstruct_timeslice_and_at_agree_with_pointwise():
    rng = np.random.default_rng(6)
    field = _random_field(rng, nt=4, ny=3, nx=3, n_modes=2, n_real=6)
    grid = GridSpec(nx=3, ny=3, nt=4, dx=1.0, dt=1.0)
    for t in range(4):
        slab = reconstruct_timeslice(field, t)
        assert slab.shape == (6, 9, 2)
        for r in range(6):
            for c in range(9):
                s = t * 9 + c
                assert np.array_equal(slab[r, c], reconstruct_velocity(field, s, r))
        cells = np.arange(9, dtype=np.int64)
        reals = np.full(9, 4, dtype=np.int64)
        gathered = reconstruct_at(field, t, cells, reals)
        assert np.array_equal(gathered, slab[4])


def test_field_shape_validation():
    rng = np.random.default_rng(7)
    with pytest.raises(ContractViolation):
        DOVelocityField(
            mean=rng.normal(size=(2, 3, 4, 2)),
            modes=rng.normal(size=(1, 2, 3, 3, 2)),
            coeffs=rng.normal(size=(2, 5, 1)),
        )
    with pytest.raises(ContractViolation):
        DOVelocityField(
            mean=rng.normal(size=(2, 3, 4, 2)),
            modes=rng.normal(size=(1, 2, 3, 4, 2)),
            coeffs=rng.normal(size=(2, 5, 2)),
        )


def test_action_space_layout():
    acts = ActionSpace(n_headings=4, n_speeds=2, f_max=1.0)
    assert acts.n_actions == 8
    # a = h * n_speeds + k; speeds exclude zero
    assert acts.heading_index(5) == 2
    assert acts.speed_index(5) == 1
    assert acts.speed(0) == pytest.approx(0.5)
    assert acts.speed(1) == pytest.approx(1.0)
    vecs = acts.vectors()
    assert vecs.shape == (8, 2)
    assert np.allclose(vecs[1], [1.0, 0.0])
    assert np.allclose(vecs[3], [0.0, 1.0], atol=1e-15)
    assert np.allclose(np.hypot(vecs[:, 0], vecs[:, 1]), acts.speeds())


def test_action_space_validation():
    with pytest.raises(ContractViolation):
        ActionSpace(n_headings=0, n_speeds=2, f_max=1.0)
    with pytest.raises(ContractViolation):
        ActionSpace(n_headings=4, n_speeds=2, f_max=0.0)


def test_segment_blocked_degenerate_and_direct_hit():
    grid = GridSpec(nx=5, ny=5, nt=2, dx=1.0, dt=1.0)
    mask = np.zeros((2, 5, 5), dtype=bool)
    mask[0, 2, 2] = True
    obstacles = ObstacleMask(mask=mask)
    free = grid.cell_center(0, 0)
    assert not segment_blocked(obstacles, grid, free, free, 0)
    # straight pass through the masked cell's center
    assert segment_blocked(obstacles, grid, (0.5, 2.5), (4.5, 2.5), 0)
    # same segment at a time where the cell is free
    assert not segment_blocked(obstacles, grid, (0.5, 2.5), (4.5, 2.5), 1)


def test_segment_blocked_matches_supersampled_oracle():
    grid = GridSpec(nx=6, ny=6, nt=1, dx=1.0, dt=1.0)
    rng = np.random.default_rng(11)
    mask = np.zeros((1, 6, 6), dtype=bool)
    mask[0] = rng.random((6, 6)) < 0.2
    obstacles = ObstacleMask(mask=mask)

    def oracle(p0, p1):
        length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
        n = max(int(math.ceil(length / (grid.dx / 2))), 1)
        for q in range(n + 1):
            f = min(q / n, 1.0)
            x = p0[0] + f * (p1[0] - p0[0])
            y = p0[1] + f * (p1[1] - p0[1])
            i = math.floor(x / grid.dx)
            j = math.floor(y / grid.dx)
            if 0 <= i < 6 and 0 <= j < 6 and mask[0, j, i]:
                return True
        return False

    for _ in range(200):
        p0 = rng.uniform(0.2, 5.8, size=2)
        p1 = p0 + rng.uniform(-2.5, 2.5, size=2)
        assert segment_blocked(obstacles, grid, p0, p1, 0) == oracle(tuple(p0), tuple(p1))


def test_segment_blocked_time_index_range():
    grid = GridSpec(nx=2, ny=2, nt=2, dx=1.0, dt=1.0)
    obstacles = ObstacleMask(mask=np.zeros((2, 2, 2), dtype=bool))
    with pytest.raises(ContractViolation):
        segment_blocked(obstacles, grid, (0.5, 0.5), (1.5, 0.5), 2)


def test_storage_footprint_formulas():
    rng = np.random.default_rng(12)
    field = _random_field(rng, nt=3, ny=3, nx=4, n_modes=2, n_real=7)
    reduced, full = storage_footprint(field)
    n_g = 3 * 3 * 4
    assert reduced == 2 * (1 + 2) * n_g + 2 * 7 * 3
    assert full == 2 * n_g * 7


def test_storage_footprint_mean_only():
    rng = np.random.default_rng(13)
    field = _random_field(rng, nt=2, ny=2, nx=2, n_modes=0, n_real=3)
    reduced, full = storage_footprint(field)
    assert reduced == 2 * 8
    assert full == 2 * 8 * 3


def test_storage_footprint_tiny_ensemble_no_reduction():
    rng = np.random.default_rng(14)
    field = _random_field(rng, nt=4, ny=2, nx=2, n_modes=1, n_real=1)
    reduced, full = storage_footprint(field)
    n_g = 4 * 2 * 2
    assert reduced == 4 * n_g + 4
    assert full == 2 * n_g
    assert reduced > full


def test_velocity_bound_dominates_exact_scan(tiny_env):
    field = tiny_env.field
    bx, by = velocity_bound(field)
    worst_x = 0.0
    worst_y = 0.0
    for t in range(field.nt):
        slab = reconstruct_timeslice(field, t)
        worst_x = max(worst_x, float(np.abs(slab[..., 0]).max()))
        worst_y = max(worst_y, float(np.abs(slab[..., 1]).max()))
    assert bx >= worst_x
    assert by >= worst_y


def test_environment_dimension_checks():
    env = make_tiny_env()
    from flowmdp.environment import Environment, ScalarMeanField

    bad_scalar = ScalarMeanField(g_mean=np.zeros((6, 6, 5)))
    with pytest.raises(ContractViolation):
        Environment(
            grid=env.grid, field=env.field, scalar=bad_scalar, obstacles=env.obstacles
        )
