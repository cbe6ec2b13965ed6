"""Shared fixtures: a small deterministic environment and a seeded random
environment factory used by the unit and acceptance tests."""

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
from flowmdp.model_builder import OBJECTIVES, RewardConfig
from flowmdp.synthesis import (
    DoubleGyreConfig,
    ObstacleConfig,
    RadiationConfig,
    generate_double_gyre,
    generate_obstacles,
    generate_radiation,
)


def make_tiny_env() -> Environment:
    """6x6x6 generated world with one static obstacle cell at (3, 3)."""
    grid = GridSpec(nx=6, ny=6, nt=6, dx=1.0, dt=0.7)
    field = generate_double_gyre(
        DoubleGyreConfig(
            grid=grid,
            amplitude=0.3,
            eps=0.15,
            n_modes=3,
            n_realizations=16,
            rng_seed=7,
        )
    )
    scalar = generate_radiation(
        RadiationConfig(grid=grid, base_level=1.0, cloud_speed=0.5, cloud_width=2.0)
    )
    obstacles = generate_obstacles(
        ObstacleConfig(
            grid=grid, side=1, entry_time=0, speed=0.0, initial_positions=((3, 3),)
        )
    )
    return Environment(grid=grid, field=field, scalar=scalar, obstacles=obstacles)


@pytest.fixture(scope="session")
def tiny_env() -> Environment:
    return make_tiny_env()


def make_zero_flow_env(
    nx: int = 5,
    ny: int = 5,
    nt: int = 6,
    dx: float = 1.0,
    dt: float = 1.0,
    n_realizations: int = 4,
    mask_cells: tuple = (),
    g_level: float = 1.0,
) -> Environment:
    """Still water: mean velocity zero, no modes, uniform scalar field.

    Every transition is then a pure function of the action, which makes
    successor cells and rewards hand-computable.
    """
    grid = GridSpec(nx=nx, ny=ny, nt=nt, dx=dx, dt=dt)
    mean = np.zeros((nt, ny, nx, 2))
    modes = np.zeros((0, nt, ny, nx, 2))
    coeffs = np.zeros((nt, n_realizations, 0))
    field = DOVelocityField(mean=mean, modes=modes, coeffs=coeffs)
    scalar = ScalarMeanField(g_mean=np.full((nt, ny, nx), g_level))
    mask = np.zeros((nt, ny, nx), dtype=bool)
    for (ci, cj) in mask_cells:
        mask[:, cj, ci] = True
    return Environment(
        grid=grid, field=field, scalar=scalar, obstacles=ObstacleMask(mask=mask)
    )


def make_random_env(seed: int):
    """Draw a small random world plus matching actions, rewards and target.

    Sizes stay inside the brute-force oracle's envelope: N_c <= 64,
    |A| <= 16, N_rv <= 64, nt <= 10. Returns (env, actions, rcfg, target).
    """
    rng = np.random.default_rng(seed)
    nx = int(rng.integers(2, 9))
    ny = int(rng.integers(2, 9))
    while nx * ny > 64:
        ny = int(rng.integers(2, 9))
    nt = int(rng.integers(3, 11))
    dx = float(rng.choice([0.5, 1.0, 2.0]))
    dt = float(rng.choice([0.5, 1.0]))
    origin = (float(rng.uniform(-3.0, 3.0)), float(rng.uniform(-3.0, 3.0)))
    grid = GridSpec(nx=nx, ny=ny, nt=nt, dx=dx, dt=dt, origin=origin)

    n_modes = int(rng.integers(0, 4))
    n_real = int(rng.choice([4, 8, 16, 32, 64]))
    mean = rng.normal(0.0, 0.3 * dx / dt, size=(nt, ny, nx, 2))
    modes = rng.normal(0.0, 1.0, size=(n_modes, nt, ny, nx, 2))
    coeffs = rng.normal(0.0, 0.2 * dx / dt, size=(nt, n_real, n_modes))
    field = DOVelocityField(mean=mean, modes=modes, coeffs=coeffs)

    scalar = ScalarMeanField(g_mean=rng.uniform(0.0, 2.0, size=(nt, ny, nx)))
    mask = rng.random(size=(nt, ny, nx)) < 0.08
    env = Environment(
        grid=grid, field=field, scalar=scalar, obstacles=ObstacleMask(mask=mask)
    )

    n_headings, n_speeds = [(4, 1), (4, 2), (8, 1), (8, 2), (16, 1)][
        int(rng.integers(0, 5))
    ]
    actions = ActionSpace(
        n_headings=n_headings,
        n_speeds=n_speeds,
        f_max=float(rng.choice([0.5, 1.0, 1.5])) * dx / dt,
    )

    objective = OBJECTIVES[int(rng.integers(0, len(OBJECTIVES)))]
    rcfg = RewardConfig(
        objective=objective, c_f=1.0, c_r=0.8, r_term=50.0, r_outbound=-200.0
    )
    target = (int(rng.integers(0, nx)), int(rng.integers(0, ny)))
    return env, actions, rcfg, target


@pytest.fixture
def random_env_factory():
    return make_random_env


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo one verdict line per acceptance criterion into the run footer,
    so the lines survive pytest's stdout capture."""
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
