"""Discretized spatio-temporal world: grid, fields, actions, point queries.

The planning domain is a rectangular grid of square cells observed at
discrete time indices. A reduced-order stochastic velocity field assigns
every (cell, time, realization) triple a flow vector; a scalar mean field
and a time-varying obstacle mask complete the environment. Everything here
is immutable after construction and safe for unrestricted concurrent reads.

Flat state indexing
-------------------
A spatio-temporal state is ``s = t * N_c + j * nx + i`` where ``N_c = nx * ny``
is the spatial cell count. Index ``N_g = nx * ny * nt`` is reserved for the
absorbing SINK state that terminated transitions fall into.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

#: Marker returned by cell_of for positions outside the domain. Outside is a
#: value, not an error: callers decide what an out-of-domain landing means.
OUTSIDE = -1


@dataclass(frozen=True)
class GridSpec:
    """Geometry of the spatio-temporal grid.

    Cell ``(i, j)`` covers the half-open square
    ``[origin_x + i*dx, origin_x + (i+1)*dx) x [origin_y + j*dx, origin_y + (j+1)*dx)``
    and has its center at ``origin + (i + 0.5, j + 0.5) * dx``. Cells are
    square; ``dx`` is both the width and the height.
    """

    nx: int
    ny: int
    nt: int
    dx: float
    dt: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1 or self.nt < 1:
            raise ContractViolation("grid dimensions must be >= 1")
        if self.dx <= 0 or self.dt <= 0:
            raise ContractViolation("dx and dt must be > 0")

    @property
    def n_cells(self) -> int:
        """Spatial cell count N_c."""
        return self.nx * self.ny

    @property
    def n_states(self) -> int:
        """Spatio-temporal state count N_g (SINK excluded)."""
        return self.nx * self.ny * self.nt

    @property
    def sink(self) -> int:
        """Flat index of the absorbing SINK state."""
        return self.n_states

    def state_index(self, i: int, j: int, t: int) -> int:
        if not (0 <= i < self.nx and 0 <= j < self.ny and 0 <= t < self.nt):
            raise ContractViolation(f"cell ({i},{j},{t}) outside grid")
        return t * self.n_cells + j * self.nx + i

    def split_index(self, s: int) -> tuple[int, int, int]:
        """Inverse of state_index: flat state -> (i, j, t)."""
        if not (0 <= s < self.n_states):
            raise ContractViolation(f"state index {s} out of range")
        t, rem = divmod(s, self.n_cells)
        j, i = divmod(rem, self.nx)
        return i, j, t

    def cell_center(self, i: int, j: int) -> np.ndarray:
        return np.array(
            [
                self.origin[0] + (i + 0.5) * self.dx,
                self.origin[1] + (j + 0.5) * self.dx,
            ]
        )

    def center_of(self, s: int) -> np.ndarray:
        """Center position of a state's spatial cell."""
        i, j, _ = self.split_index(s)
        return self.cell_center(i, j)

    def cell_centers(self) -> np.ndarray:
        """(N_c, 2) array of all cell centers, row-major in (j, i)."""
        ii = np.arange(self.nx, dtype=np.float64)
        jj = np.arange(self.ny, dtype=np.float64)
        xs = self.origin[0] + (ii + 0.5) * self.dx
        ys = self.origin[1] + (jj + 0.5) * self.dx
        out = np.empty((self.ny, self.nx, 2), dtype=np.float64)
        out[:, :, 0] = xs[None, :]
        out[:, :, 1] = ys[:, None]
        return out.reshape(self.n_cells, 2)


@dataclass(frozen=True)
class DOVelocityField:
    """Reduced-order stochastic velocity field (mean + modes + coefficients).

    A realization ``r`` of the flow at cell ``(i, j)`` and time ``t`` is

        v = mean[t, j, i, :] + sum_m coeffs[t, r, m] * modes[m, t, j, i, :]

    Parameters
    ----------
    mean : ndarray, shape (nt, ny, nx, 2)
        Ensemble-mean velocity, components (x, y).
    modes : ndarray, shape (n_modes, nt, ny, nx, 2)
        Spatial basis fields, orthonormal over the grid at each time index.
    coeffs : ndarray, shape (nt, n_realizations, n_modes)
        Per-realization expansion coefficients.
    """

    mean: np.ndarray
    modes: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self) -> None:
        nt, ny, nx, nc = self.mean.shape
        if nc != 2:
            raise ContractViolation("mean must have 2 velocity components")
        if self.modes.shape[1:] != (nt, ny, nx, 2):
            raise ContractViolation(
                f"modes shape {self.modes.shape} inconsistent with mean {self.mean.shape}"
            )
        n_modes = self.modes.shape[0]
        if self.coeffs.shape[0] != nt or self.coeffs.shape[2] != n_modes:
            raise ContractViolation(
                f"coeffs shape {self.coeffs.shape} inconsistent with "
                f"nt={nt}, n_modes={n_modes}"
            )
        for name, arr in (("mean", self.mean), ("modes", self.modes), ("coeffs", self.coeffs)):
            if not np.all(np.isfinite(arr)):
                raise ContractViolation(f"non-finite values in {name}")

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def n_realizations(self) -> int:
        return self.coeffs.shape[1]

    @property
    def nt(self) -> int:
        return self.mean.shape[0]

    @property
    def n_cells(self) -> int:
        return self.mean.shape[1] * self.mean.shape[2]


@dataclass(frozen=True)
class ScalarMeanField:
    """Mean of a scalar surface field (e.g. harvestable radiation), [t][y][x]."""

    g_mean: np.ndarray

    def __post_init__(self) -> None:
        if self.g_mean.ndim != 3:
            raise ContractViolation("g_mean must be indexed [t][y][x]")
        if not np.all(np.isfinite(self.g_mean)):
            raise ContractViolation("non-finite values in g_mean")


@dataclass(frozen=True)
class ObstacleMask:
    """Boolean restricted-cell mask, [t][y][x]; True marks a blocked cell."""

    mask: np.ndarray

    def __post_init__(self) -> None:
        if self.mask.ndim != 3 or self.mask.dtype != np.bool_:
            raise ContractViolation("mask must be a boolean [t][y][x] array")


@dataclass(frozen=True)
class ActionSpace:
    """Discrete heading/speed action set.

    Action ``a = h * n_speeds + k`` moves with relative velocity
    ``F * (cos th, sin th)`` where ``th = 2*pi*h / n_headings`` and
    ``F = f_max * (k + 1) / n_speeds``. Zero speed is excluded: it would
    duplicate one no-op action across every heading.
    """

    n_headings: int
    n_speeds: int
    f_max: float

    def __post_init__(self) -> None:
        if self.n_headings < 1 or self.n_speeds < 1:
            raise ContractViolation("need at least one heading and one speed")
        if self.f_max <= 0:
            raise ContractViolation("f_max must be > 0")

    @property
    def n_actions(self) -> int:
        return self.n_headings * self.n_speeds

    def heading_index(self, a: int) -> int:
        return a // self.n_speeds

    def speed_index(self, a: int) -> int:
        return a % self.n_speeds

    def speed(self, a: int) -> float:
        return self.f_max * (self.speed_index(a) + 1) / self.n_speeds

    def vectors(self) -> np.ndarray:
        """(n_actions, 2) array of action velocity vectors."""
        out = np.empty((self.n_actions, 2), dtype=np.float64)
        for a in range(self.n_actions):
            h = self.heading_index(a)
            theta = 2.0 * math.pi * h / self.n_headings
            f = self.speed(a)
            out[a, 0] = f * math.cos(theta)
            out[a, 1] = f * math.sin(theta)
        return out

    def speeds(self) -> np.ndarray:
        """(n_actions,) array of action speeds."""
        return np.array([self.speed(a) for a in range(self.n_actions)])


@dataclass(frozen=True)
class Environment:
    """Bundle of one grid plus the fields defined on it."""

    grid: GridSpec
    field: DOVelocityField
    scalar: ScalarMeanField
    obstacles: ObstacleMask

    def __post_init__(self) -> None:
        g = self.grid
        shape = (g.nt, g.ny, g.nx)
        if self.field.mean.shape[:3] != shape:
            raise ContractViolation("velocity field dims do not match grid")
        if self.scalar.g_mean.shape != shape:
            raise ContractViolation("scalar field dims do not match grid")
        if self.obstacles.mask.shape != shape:
            raise ContractViolation("obstacle mask dims do not match grid")


# ---------------------------------------------------------------------------
# Point queries
# ---------------------------------------------------------------------------

def reconstruct_velocity(field: DOVelocityField, s: int, r: int) -> np.ndarray:
    """Velocity of realization ``r`` at state ``s``.

    Evaluates ``mean + sum_m coeffs[t, r, m] * modes[m, t, ...]`` at the
    state's cell. ``s`` must be a real state (not SINK) and ``r`` a valid
    realization index; anything else is a contract violation.
    """
    nt, ny, nx = field.mean.shape[:3]
    n_cells = ny * nx
    if not (0 <= s < nt * n_cells):
        raise ContractViolation(f"state index {s} out of range (SINK has no velocity)")
    if not (0 <= r < field.n_realizations):
        raise ContractViolation(f"realization index {r} out of range")
    t, rem = divmod(s, n_cells)
    j, i = divmod(rem, nx)
    v = field.mean[t, j, i].copy()
    for m in range(field.n_modes):
        v = v + field.coeffs[t, r, m] * field.modes[m, t, j, i]
    return v


def reconstruct_timeslice(field: DOVelocityField, t: int) -> np.ndarray:
    """All realizations' velocities at time ``t``.

    Returns an (n_realizations, N_c, 2) array. The arithmetic (mean plus
    mode contributions added in ascending mode order) is element-for-element
    identical to :func:`reconstruct_velocity` and :func:`reconstruct_at`, so
    all three produce bit-identical values for the same (s, r, t).
    """
    nt, ny, nx = field.mean.shape[:3]
    if not (0 <= t < nt):
        raise ContractViolation(f"time index {t} out of range")
    n_cells = ny * nx
    mean_flat = field.mean[t].reshape(n_cells, 2)
    v = np.broadcast_to(mean_flat, (field.n_realizations, n_cells, 2)).copy()
    for m in range(field.n_modes):
        mode_flat = field.modes[m, t].reshape(n_cells, 2)
        v += field.coeffs[t, :, m, None, None] * mode_flat[None, :, :]
    return v


def reconstruct_at(
    field: DOVelocityField, t: int, cells: np.ndarray, realizations: np.ndarray
) -> np.ndarray:
    """Velocities for paired (cell, realization) arrays at time ``t``.

    ``cells`` holds flat spatial indices (j * nx + i); the result has shape
    (len(cells), 2) and is bit-identical to gathering the same entries from
    :func:`reconstruct_timeslice`.
    """
    nt, ny, nx = field.mean.shape[:3]
    if not (0 <= t < nt):
        raise ContractViolation(f"time index {t} out of range")
    n_cells = ny * nx
    mean_flat = field.mean[t].reshape(n_cells, 2)
    v = mean_flat[cells].copy()
    for m in range(field.n_modes):
        mode_flat = field.modes[m, t].reshape(n_cells, 2)
        v += field.coeffs[t, realizations, m, None] * mode_flat[cells]
    return v


def cell_of(grid: GridSpec, pos, t_idx: int):
    """Map a position and time index to a flat state, or OUTSIDE.

    Uses floor rounding against the half-open cell convention: a position
    exactly on a cell's upper edge belongs to the next cell. Returns the
    OUTSIDE marker when the position leaves the spatial domain or
    ``t_idx >= nt``.
    """
    x, y = float(pos[0]), float(pos[1])
    i = math.floor((x - grid.origin[0]) / grid.dx)
    j = math.floor((y - grid.origin[1]) / grid.dx)
    if 0 <= i < grid.nx and 0 <= j < grid.ny and t_idx < grid.nt:
        return t_idx * grid.n_cells + j * grid.nx + i
    return OUTSIDE


def _segments_blocked(
    mask_t: np.ndarray, grid: GridSpec, p0: np.ndarray, p1: np.ndarray
) -> np.ndarray:
    """Vectorized obstacle-transit test for a batch of segments.

    ``mask_t`` is the (ny, nx) obstacle mask at the departure time, ``p0``
    and ``p1`` are (n, 2) endpoint arrays. Each segment is sampled at
    ``ceil(length / (dx/2)) + 1`` evenly spaced points including both
    endpoints (spacing <= dx/2). The sample fractions depend only on the
    segment's own length, so the result for a segment does not change with
    the batch it is submitted in.
    """
    p0 = np.asarray(p0, dtype=np.float64).reshape(-1, 2)
    p1 = np.asarray(p1, dtype=np.float64).reshape(-1, 2)
    n = p0.shape[0]
    delta = p1 - p0
    length = np.hypot(delta[:, 0], delta[:, 1])
    n_steps = np.maximum(np.ceil(length / (0.5 * grid.dx)), 1.0)
    max_steps = int(n_steps.max())
    blocked = np.zeros(n, dtype=bool)
    mask_flat = mask_t.reshape(-1)
    for q in range(max_steps + 1):
        frac = np.minimum(q / n_steps, 1.0)
        px = p0[:, 0] + frac * delta[:, 0]
        py = p0[:, 1] + frac * delta[:, 1]
        i = np.floor((px - grid.origin[0]) / grid.dx).astype(np.int64)
        j = np.floor((py - grid.origin[1]) / grid.dx).astype(np.int64)
        inside = (i >= 0) & (i < grid.nx) & (j >= 0) & (j < grid.ny)
        idx = np.where(inside, j * grid.nx + i, 0)
        blocked |= inside & mask_flat[idx]
    return blocked


def segment_blocked(mask: ObstacleMask, grid: GridSpec, p0, p1, t_idx: int) -> bool:
    """True iff the straight segment [p0, p1] crosses a masked cell.

    Sample points are spaced at most dx/2 apart with both endpoints
    included, and tested against the mask at time ``t_idx`` (the step's
    departure time). Points that fall outside the domain are never blocked.
    """
    if not (0 <= t_idx < mask.mask.shape[0]):
        raise ContractViolation(f"time index {t_idx} out of range")
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    return bool(_segments_blocked(mask.mask[t_idx], grid, p0[None, :], p1[None, :])[0])


def storage_footprint(field: DOVelocityField) -> tuple[int, int]:
    """Scalar counts for reduced-order versus full ensemble storage.

    Returns ``(reduced, full)`` where ``reduced`` counts the mean, mode and
    coefficient scalars actually stored and ``full`` counts what storing
    every realization of the velocity field outright would take:

        reduced = 2 * (1 + N_m) * N_g + N_m * N_rv * N_t
        full    = 2 * N_g * N_rv
    """
    nt, ny, nx = field.mean.shape[:3]
    n_g = nt * ny * nx
    n_m = field.n_modes
    n_rv = field.n_realizations
    reduced = 2 * (1 + n_m) * n_g + n_m * n_rv * nt
    full = 2 * n_g * n_rv
    return reduced, full


def velocity_bound(field: DOVelocityField) -> tuple[float, float]:
    """Cheap per-component upper bound on |v| over all states/realizations.

    Uses the triangle inequality over modes; always >= the exact scan, so
    it is safe for sizing conservative reach estimates without touching
    every (state, realization) pair.
    """
    bounds = [0.0, 0.0]
    for c in (0, 1):
        per_t = np.abs(field.mean[..., c]).max(axis=(1, 2))
        for m in range(field.n_modes):
            coeff_max = np.abs(field.coeffs[:, :, m]).max(axis=1)
            mode_max = np.abs(field.modes[m, ..., c]).max(axis=(1, 2))
            per_t = per_t + coeff_max * mode_max
        bounds[c] = float(per_t.max()) if per_t.size else 0.0
    return bounds[0], bounds[1]
