"""Desk-scale synthetic environments.

Provides an analytic stochastic double-gyre velocity field already in
reduced form (mean + orthonormal modes + seeded coefficients), a
westward-translating radiation field, eastward-moving square obstacles,
and an SVD-based reduction of raw velocity ensembles to the same form.

All generators are pure functions of (config, seed): identical inputs give
bit-identical arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import (
    DOVelocityField,
    GridSpec,
    ObstacleMask,
    ScalarMeanField,
)
from .errors import ContractViolation

# Fractional amplitude of the slow sinusoidal time modulation applied to the
# mean gyre strength (one full cycle over the horizon).
_MEAN_MODULATION = 0.15

# Per-mode coefficient scale decay and its slow time modulation.
_MODE_DECAY = 0.65
_MODE_MODULATION = 0.25

# Skewed two-component Gaussian mixture for coefficient samples: weights,
# means and standard deviations. The means satisfy w1*m1 + w2*m2 = 0 so the
# population mean is zero before exact sample centering.
_MIX_WEIGHT = 0.7
_MIX_MEANS = (-0.5, 0.5 * 0.7 / 0.3)
_MIX_STDS = (0.7, 1.3)

# Wavenumber pairs (p, q) for perturbation-mode streamfunctions, in order.
_MODE_WAVENUMBERS = [
    (1, 1), (2, 1), (1, 2), (2, 2), (3, 1), (1, 3), (3, 2), (2, 3),
    (3, 3), (4, 1), (1, 4), (4, 2), (2, 4), (4, 3), (3, 4), (4, 4),
]


@dataclass(frozen=True)
class DoubleGyreConfig:
    grid: GridSpec
    amplitude: float
    eps: float
    n_modes: int
    n_realizations: int
    rng_seed: int

    def __post_init__(self) -> None:
        if self.amplitude <= 0:
            raise ContractViolation("amplitude must be > 0")
        if self.eps < 0:
            raise ContractViolation("eps must be >= 0")
        if self.n_modes < 0:
            raise ContractViolation("n_modes must be >= 0")
        if self.n_modes > len(_MODE_WAVENUMBERS):
            raise ContractViolation(
                f"at most {len(_MODE_WAVENUMBERS)} modes supported"
            )
        if self.n_realizations < 1:
            raise ContractViolation("n_realizations must be >= 1")


@dataclass(frozen=True)
class RadiationConfig:
    grid: GridSpec
    base_level: float
    cloud_speed: float  # cells per step, westward
    cloud_width: float  # cells

    def __post_init__(self) -> None:
        if self.base_level < 0:
            raise ContractViolation("base_level must be >= 0")
        if self.cloud_width <= 0:
            raise ContractViolation("cloud_width must be > 0")


@dataclass(frozen=True)
class ObstacleConfig:
    grid: GridSpec
    side: int  # square side, in cells
    entry_time: float
    speed: float  # cells per step, eastward
    initial_positions: tuple = ()  # lower-left corners (cell coords) at entry

    def __post_init__(self) -> None:
        if self.side < 1:
            raise ContractViolation("side must be >= 1")


def _cell_center_fractions(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center coordinates normalized to [0, 1] per axis."""
    xh = (np.arange(grid.nx, dtype=np.float64) + 0.5) / grid.nx
    yh = (np.arange(grid.ny, dtype=np.float64) + 0.5) / grid.ny
    return xh, yh


def _mean_gyre(grid: GridSpec, amplitude: float) -> np.ndarray:
    """Time-modulated two-gyre mean field, shape (nt, ny, nx, 2).

    The streamfunction sin(2*pi*x)*sin(pi*y) (in normalized coordinates)
    yields two counter-rotating gyres side by side with a northward jet
    along the domain's vertical centerline. The x-velocity peaks at
    ``amplitude``; the jet peaks at twice that (the aspect factor that
    keeps the field divergence-free on the unit square).
    """
    xh, yh = _cell_center_fractions(grid)
    sin2x = np.sin(2.0 * np.pi * xh)
    cos2x = np.cos(2.0 * np.pi * xh)
    siny = np.sin(np.pi * yh)
    cosy = np.cos(np.pi * yh)
    aspect = 2.0 * grid.ny / grid.nx
    u = sin2x[None, :] * cosy[:, None]
    v = -aspect * cos2x[None, :] * siny[:, None]
    out = np.empty((grid.nt, grid.ny, grid.nx, 2), dtype=np.float64)
    for t in range(grid.nt):
        mod = amplitude * (1.0 + _MEAN_MODULATION * np.sin(2.0 * np.pi * t / grid.nt))
        out[t, :, :, 0] = mod * u
        out[t, :, :, 1] = mod * v
    return out


def _raw_mode(grid: GridSpec, p: int, q: int, phase: float) -> np.ndarray:
    """Divergence-free perturbation field from streamfunction sin/sin."""
    xh, yh = _cell_center_fractions(grid)
    sx = np.sin(p * np.pi * xh + phase)
    cx = np.cos(p * np.pi * xh + phase)
    sy = np.sin(q * np.pi * yh)
    cy = np.cos(q * np.pi * yh)
    out = np.empty((grid.ny, grid.nx, 2), dtype=np.float64)
    out[:, :, 0] = -q * sx[None, :] * cy[:, None]
    out[:, :, 1] = p * cx[None, :] * sy[:, None]
    return out


def _orthonormalize(stack: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt over rows (plain-sum inner product).

    Implemented explicitly (rather than via a QR factorization) so the
    result is reproducible bit-for-bit regardless of the linear-algebra
    backend in use.
    """
    out = stack.astype(np.float64).copy()
    k = out.shape[0]
    for m in range(k):
        for prev in range(m):
            out[m] -= (out[prev] @ out[m]) * out[prev]
        norm = np.sqrt(out[m] @ out[m])
        if norm < 1e-12:
            raise ContractViolation("degenerate perturbation mode (zero norm)")
        out[m] /= norm
    return out


def generate_double_gyre(cfg: DoubleGyreConfig) -> DOVelocityField:
    """Build a stochastic double-gyre velocity field in reduced form.

    The mean is the classic two-gyre circulation with a slow sinusoidal
    strength modulation. Perturbation modes come from higher-wavenumber
    divergence-free streamfunctions with a per-time phase drift,
    orthonormalized at every time index under the plain-sum inner product.

    Coefficients are drawn from a skewed Gaussian mixture, scaled by
    ``eps`` and a decaying per-mode amplitude, and exactly centered over
    the ensemble at every (t, mode). Because the modes have unit energy
    over the grid (pointwise magnitude ~ 1/sqrt(2 N_c)), the coefficient
    scale carries a sqrt(2 N_c) factor so that ``eps`` reads as the
    approximate pointwise velocity perturbation, independent of grid size.
    Draws are independent across time indices, which makes an ensemble
    rollout an unbiased sample of the counted transition model rather
    than a temporally correlated one.
    """
    grid = cfg.grid
    n_cells = grid.n_cells
    mean = _mean_gyre(grid, cfg.amplitude)

    modes = np.zeros((cfg.n_modes, grid.nt, grid.ny, grid.nx, 2), dtype=np.float64)
    for t in range(grid.nt):
        raw = np.empty((cfg.n_modes, 2 * n_cells), dtype=np.float64)
        for m in range(cfg.n_modes):
            p, q = _MODE_WAVENUMBERS[m]
            phase = 0.2 * np.sin(2.0 * np.pi * t / grid.nt + 0.9 * m)
            raw[m] = _raw_mode(grid, p, q, phase).reshape(-1)
        if cfg.n_modes:
            ortho = _orthonormalize(raw)
            modes[:, t] = ortho.reshape(cfg.n_modes, grid.ny, grid.nx, 2)

    rng = np.random.default_rng(cfg.rng_seed)
    coeffs = np.zeros((grid.nt, cfg.n_realizations, cfg.n_modes), dtype=np.float64)
    if cfg.n_modes and cfg.eps > 0:
        shape = (grid.nt, cfg.n_realizations, cfg.n_modes)
        pick = rng.random(shape) < _MIX_WEIGHT
        z = np.where(
            pick,
            rng.normal(_MIX_MEANS[0], _MIX_STDS[0], shape),
            rng.normal(_MIX_MEANS[1], _MIX_STDS[1], shape),
        )
        z -= z.mean(axis=1, keepdims=True)  # exact zero sample mean per (t, m)
        energy = np.sqrt(2.0 * n_cells)
        for m in range(cfg.n_modes):
            base = _MODE_DECAY ** m
            for t in range(grid.nt):
                scale = cfg.eps * energy * base * (
                    1.0 + _MODE_MODULATION * np.sin(2.0 * np.pi * t / grid.nt + 0.9 * m)
                )
                coeffs[t, :, m] = scale * z[t, :, m]
    return DOVelocityField(mean=mean, modes=modes, coeffs=coeffs)


def generate_radiation(cfg: RadiationConfig) -> ScalarMeanField:
    """Sunny background shaded by a north-south cloud band moving west.

    The cloud is a Gaussian dip centered at the domain's east edge at t=0,
    translating westward by ``cloud_speed`` cells per step:

        g(x, t) = base_level * (1 - exp(-(x - xc(t))^2 / (2 w^2)))

    so the field is nonnegative everywhere and satisfies the pure
    translation property g(x, t+1) = g(x + speed*dx, t) in continuous x.
    """
    grid = cfg.grid
    width = cfg.cloud_width * grid.dx
    x_centers = grid.origin[0] + (np.arange(grid.nx, dtype=np.float64) + 0.5) * grid.dx
    east_edge = grid.origin[0] + grid.nx * grid.dx
    out = np.empty((grid.nt, grid.ny, grid.nx), dtype=np.float64)
    for t in range(grid.nt):
        xc = east_edge - cfg.cloud_speed * grid.dx * t
        profile = cfg.base_level * (
            1.0 - np.exp(-((x_centers - xc) ** 2) / (2.0 * width * width))
        )
        out[t, :, :] = profile[None, :]
    return ScalarMeanField(g_mean=out)


def generate_obstacles(cfg: ObstacleConfig) -> ObstacleMask:
    """Square restricted regions entering from the west, moving east.

    Each initial position is the square's lower-left cell coordinate at
    ``entry_time``. Positions advance by the real-valued speed and are
    rasterized by rounding to the nearest cell; footprints are clipped at
    the domain boundary. Before entry_time the mask is all False.
    """
    grid = cfg.grid
    mask = np.zeros((grid.nt, grid.ny, grid.nx), dtype=bool)
    for t in range(grid.nt):
        if t < cfg.entry_time:
            continue
        for (px, py) in cfg.initial_positions:
            x = float(px) + cfg.speed * (t - cfg.entry_time)
            i0 = int(np.rint(x))
            j0 = int(np.rint(float(py)))
            i_lo, i_hi = max(i0, 0), min(i0 + cfg.side, grid.nx)
            j_lo, j_hi = max(j0, 0), min(j0 + cfg.side, grid.ny)
            if i_lo < i_hi and j_lo < j_hi:
                mask[t, j_lo:j_hi, i_lo:i_hi] = True
    return ObstacleMask(mask=mask)


def reduce_order(ensemble: np.ndarray, n_modes: int) -> DOVelocityField:
    """Reduce a raw velocity ensemble to mean + modes + coefficients.

    Parameters
    ----------
    ensemble : ndarray, shape (n_realizations, nt, ny, nx, 2)
        Per-realization velocity snapshots.
    n_modes : int
        Number of singular modes to keep; at most min(n_realizations, 2*N_c).

    Per time step the ensemble mean is subtracted and the top ``n_modes``
    right-singular vectors of the centered (realization x stacked-component)
    matrix become the modes; coefficients are the projections of each
    centered realization onto them. Reconstruction error for a realization
    is exactly its share of the discarded tail singular energy.
    """
    ensemble = np.asarray(ensemble, dtype=np.float64)
    if ensemble.ndim != 5 or ensemble.shape[4] != 2:
        raise ContractViolation("ensemble must have shape (r, t, y, x, 2)")
    n_real, nt, ny, nx, _ = ensemble.shape
    n_cells = ny * nx
    if not (0 <= n_modes <= min(n_real, 2 * n_cells)):
        raise ContractViolation(
            f"n_modes={n_modes} exceeds min(n_realizations, 2*N_c)="
            f"{min(n_real, 2 * n_cells)}"
        )
    mean = np.empty((nt, ny, nx, 2), dtype=np.float64)
    modes = np.zeros((n_modes, nt, ny, nx, 2), dtype=np.float64)
    coeffs = np.zeros((nt, n_real, n_modes), dtype=np.float64)
    for t in range(nt):
        x = ensemble[:, t].reshape(n_real, 2 * n_cells)
        mu = x.mean(axis=0)
        mean[t] = mu.reshape(ny, nx, 2)
        if n_modes == 0:
            continue
        centered = x - mu
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        basis = vt[:n_modes]
        # Fix each mode's sign so its largest-magnitude entry is positive;
        # SVD signs are otherwise arbitrary.
        for m in range(n_modes):
            peak = basis[m, np.argmax(np.abs(basis[m]))]
            if peak < 0:
                basis[m] = -basis[m]
        modes[:, t] = basis.reshape(n_modes, ny, nx, 2)
        coeffs[t] = centered @ basis.T
    return DOVelocityField(mean=mean, modes=modes, coeffs=coeffs)


def reconstruct_ensemble(field: DOVelocityField) -> np.ndarray:
    """Expand a reduced field back to per-realization snapshots.

    Returns shape (n_realizations, nt, ny, nx, 2). Mostly useful for
    round-trip tests and for producing raw-ensemble inputs to
    :func:`reduce_order`.
    """
    nt, ny, nx, _ = field.mean.shape
    n_real = field.n_realizations
    out = np.empty((n_real, nt, ny, nx, 2), dtype=np.float64)
    for t in range(nt):
        slab = np.broadcast_to(field.mean[t], (n_real, ny, nx, 2)).copy()
        for m in range(field.n_modes):
            slab += field.coeffs[t, :, m, None, None, None] * field.modes[m, t][None]
        out[:, t] = slab
    return out
