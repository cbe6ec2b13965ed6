"""On-disk formats: environment containers, model, policy, trajectories.

All binary data is little-endian. Velocity, scalar, probability, and value
payloads are stored as float32 (the working precision of the original
data-parallel kernels); loaders widen to float64 for in-memory use. Writers
are deterministic byte-for-byte: fixed field order, fixed blob names,
sorted JSON keys, so identical inputs produce identical files.

Environment container (a directory):
    manifest.json            dims and blob names
    mean.f32                 [t][y][x][c]      c in (x-component, y-component)
    modes.f32                [m][t][y][x][c]
    coeffs.f32               [t][r][m]
    scalar.f32               [t][y][x]
    mask.u8                  [t][y][x]
A raw-ensemble container stores velocity.f32 [r][t][y][x][c] instead of
mean/modes/coeffs and is the input of order reduction.

Model file: "MDPMODEL" magic, u32 version/n_states/n_actions/nt, u64 total
entry count, u64 byte offsets for each (action, time) block in action-major
order plus one final offset where the rewards begin, then per block the
rows (u32), cols (u32), vals (f32) arrays, then rewards f32 [n_actions][N_g].

Policy file: "MDPOLICY" magic, u32 version, u32 n_states, values f32
[n_states], actions u16 [n_states - 1].
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .environment import (
    DOVelocityField,
    Environment,
    GridSpec,
    ObstacleMask,
    ScalarMeanField,
)
from .errors import InputOutputError
from .model_builder import CooBlock, SparseModel

_ENV_FORMAT = "env-container"
_ENV_VERSION = 1
_MODEL_MAGIC = b"MDPMODEL"
_POLICY_MAGIC = b"MDPOLICY"
_MODEL_VERSION = 1
_POLICY_VERSION = 1

TRAJECTORY_COLUMNS = (
    "realization",
    "step",
    "t",
    "x",
    "y",
    "action",
    "reward",
    "cum_reward",
    "status",
)


def _write_blob(path: Path, arr: np.ndarray, dtype: str) -> None:
    path.write_bytes(np.ascontiguousarray(arr).astype(dtype).tobytes())


def _read_blob(path: Path, dtype: str, shape: tuple) -> np.ndarray:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise InputOutputError(f"cannot read blob {path}: {exc}") from exc
    expected = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(data) != expected:
        raise InputOutputError(
            f"blob {path} has {len(data)} bytes, expected {expected}"
        )
    return np.frombuffer(data, dtype=dtype).reshape(shape)


def _grid_to_manifest(grid: GridSpec) -> dict:
    return {
        "nx": grid.nx,
        "ny": grid.ny,
        "nt": grid.nt,
        "dx": grid.dx,
        "dt": grid.dt,
        "origin": [grid.origin[0], grid.origin[1]],
    }


def _grid_from_manifest(g: dict) -> GridSpec:
    return GridSpec(
        nx=int(g["nx"]),
        ny=int(g["ny"]),
        nt=int(g["nt"]),
        dx=float(g["dx"]),
        dt=float(g["dt"]),
        origin=(float(g["origin"][0]), float(g["origin"][1])),
    )


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _read_manifest(path: Path) -> dict:
    try:
        text = (path / "manifest.json").read_text()
    except OSError as exc:
        raise InputOutputError(f"cannot read container {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputOutputError(f"malformed manifest in {path}: {exc}") from exc


def write_environment(path, env: Environment) -> None:
    """Write a reduced-order environment container directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    grid = env.grid
    field = env.field
    manifest = {
        "format": _ENV_FORMAT,
        "version": _ENV_VERSION,
        "kind": "environment",
        "grid": _grid_to_manifest(grid),
        "n_modes": field.n_modes,
        "n_realizations": field.n_realizations,
        "blobs": {
            "mean": "mean.f32",
            "modes": "modes.f32",
            "coeffs": "coeffs.f32",
            "scalar": "scalar.f32",
            "mask": "mask.u8",
        },
    }
    _write_manifest(root / "manifest.json", manifest)
    _write_blob(root / "mean.f32", field.mean, "<f4")
    _write_blob(root / "modes.f32", field.modes, "<f4")
    _write_blob(root / "coeffs.f32", field.coeffs, "<f4")
    _write_blob(root / "scalar.f32", env.scalar.g_mean, "<f4")
    _write_blob(root / "mask.u8", env.obstacles.mask, "u1")


def read_environment(path) -> Environment:
    """Load a reduced-order environment container."""
    root = Path(path)
    manifest = _read_manifest(root)
    if manifest.get("format") != _ENV_FORMAT or manifest.get("kind") != "environment":
        raise InputOutputError(f"{path} is not an environment container")
    grid = _grid_from_manifest(manifest["grid"])
    n_m = int(manifest["n_modes"])
    n_r = int(manifest["n_realizations"])
    nt, ny, nx = grid.nt, grid.ny, grid.nx
    mean = _read_blob(root / "mean.f32", "<f4", (nt, ny, nx, 2)).astype(np.float64)
    modes = _read_blob(root / "modes.f32", "<f4", (n_m, nt, ny, nx, 2)).astype(np.float64)
    coeffs = _read_blob(root / "coeffs.f32", "<f4", (nt, n_r, n_m)).astype(np.float64)
    scalar = _read_blob(root / "scalar.f32", "<f4", (nt, ny, nx)).astype(np.float64)
    mask = _read_blob(root / "mask.u8", "u1", (nt, ny, nx)).astype(bool)
    return Environment(
        grid=grid,
        field=DOVelocityField(mean=mean, modes=modes, coeffs=coeffs),
        scalar=ScalarMeanField(g_mean=scalar),
        obstacles=ObstacleMask(mask=mask),
    )


def write_raw_ensemble(path, grid: GridSpec, velocities, g_mean, mask) -> None:
    """Write a raw (full-rank) velocity ensemble container directory."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    velocities = np.asarray(velocities)
    manifest = {
        "format": _ENV_FORMAT,
        "version": _ENV_VERSION,
        "kind": "raw_ensemble",
        "grid": _grid_to_manifest(grid),
        "n_realizations": int(velocities.shape[0]),
        "blobs": {
            "velocity": "velocity.f32",
            "scalar": "scalar.f32",
            "mask": "mask.u8",
        },
    }
    _write_manifest(root / "manifest.json", manifest)
    _write_blob(root / "velocity.f32", velocities, "<f4")
    _write_blob(root / "scalar.f32", np.asarray(g_mean), "<f4")
    _write_blob(root / "mask.u8", np.asarray(mask), "u1")


def read_raw_ensemble(path):
    """Load a raw ensemble: (grid, velocities, scalar field, obstacle mask)."""
    root = Path(path)
    manifest = _read_manifest(root)
    if manifest.get("format") != _ENV_FORMAT or manifest.get("kind") != "raw_ensemble":
        raise InputOutputError(f"{path} is not a raw ensemble container")
    grid = _grid_from_manifest(manifest["grid"])
    n_r = int(manifest["n_realizations"])
    nt, ny, nx = grid.nt, grid.ny, grid.nx
    velocities = _read_blob(root / "velocity.f32", "<f4", (n_r, nt, ny, nx, 2)).astype(
        np.float64
    )
    scalar = _read_blob(root / "scalar.f32", "<f4", (nt, ny, nx)).astype(np.float64)
    mask = _read_blob(root / "mask.u8", "u1", (nt, ny, nx)).astype(bool)
    return grid, velocities, ScalarMeanField(g_mean=scalar), ObstacleMask(mask=mask)


def write_model(path, model: SparseModel) -> None:
    """Serialize a sparse model; see the module docstring for the layout."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_blocks = model.n_actions * model.nt
    nnz_total = model.nnz_total()
    header_size = len(_MODEL_MAGIC) + 4 * 4 + 8 + 8 * (n_blocks + 1)
    offsets = np.empty(n_blocks + 1, dtype="<u8")
    pos = header_size
    k = 0
    for a in range(model.n_actions):
        for t in range(model.nt):
            offsets[k] = pos
            pos += model.blocks[a][t].nnz * 12
            k += 1
    offsets[n_blocks] = pos
    with open(out, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(
            struct.pack(
                "<IIII", _MODEL_VERSION, model.n_states, model.n_actions, model.nt
            )
        )
        fh.write(struct.pack("<Q", nnz_total))
        fh.write(offsets.tobytes())
        for a in range(model.n_actions):
            for t in range(model.nt):
                b = model.blocks[a][t]
                fh.write(b.rows.astype("<u4").tobytes())
                fh.write(b.cols.astype("<u4").tobytes())
                fh.write(b.vals.astype("<f4").tobytes())
        fh.write(model.rewards.astype("<f4").tobytes())


def read_model(path) -> SparseModel:
    """Load a sparse model file; vals and rewards widen to float64."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputOutputError(f"cannot read model file {path}: {exc}") from exc
    if len(data) < len(_MODEL_MAGIC) + 24 or data[: len(_MODEL_MAGIC)] != _MODEL_MAGIC:
        raise InputOutputError(f"{path} is not a model file (bad magic)")
    off = len(_MODEL_MAGIC)
    version, n_states, n_actions, nt = struct.unpack_from("<IIII", data, off)
    off += 16
    if version != _MODEL_VERSION:
        raise InputOutputError(f"unsupported model file version {version}")
    (nnz_total,) = struct.unpack_from("<Q", data, off)
    off += 8
    n_blocks = n_actions * nt
    offsets = np.frombuffer(data, dtype="<u8", count=n_blocks + 1, offset=off)
    off += 8 * (n_blocks + 1)
    rewards_off = int(offsets[n_blocks])
    n_g = n_states - 1
    if rewards_off + 4 * n_actions * n_g != len(data):
        raise InputOutputError(f"model file {path} is truncated or padded")
    blocks: list = [[None] * nt for _ in range(n_actions)]
    total = 0
    for a in range(n_actions):
        for t in range(nt):
            k = a * nt + t
            start, end = int(offsets[k]), int(offsets[k + 1])
            if (end - start) % 12 != 0 or start < off or end > rewards_off:
                raise InputOutputError(f"model file {path} has a corrupt block table")
            nnz = (end - start) // 12
            rows = np.frombuffer(data, dtype="<u4", count=nnz, offset=start)
            cols = np.frombuffer(data, dtype="<u4", count=nnz, offset=start + 4 * nnz)
            vals = np.frombuffer(data, dtype="<f4", count=nnz, offset=start + 8 * nnz)
            blocks[a][t] = CooBlock(
                rows=rows.astype(np.uint32),
                cols=cols.astype(np.uint32),
                vals=vals.astype(np.float64),
                nnz=nnz,
            )
            total += nnz
    if total != nnz_total:
        raise InputOutputError(f"model file {path} nnz mismatch")
    rewards = np.frombuffer(
        data, dtype="<f4", count=n_actions * n_g, offset=rewards_off
    ).astype(np.float64)
    return SparseModel(
        blocks=blocks, rewards=rewards, n_states=n_states, n_actions=n_actions, nt=nt
    )


def write_policy(path, values: np.ndarray, actions: np.ndarray) -> None:
    """Serialize solver output (values incl. SINK, one action per state)."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    n_states = int(values.shape[0])
    if actions.shape[0] != n_states - 1:
        raise InputOutputError("actions must cover exactly the non-sink states")
    with open(out, "wb") as fh:
        fh.write(_POLICY_MAGIC)
        fh.write(struct.pack("<II", _POLICY_VERSION, n_states))
        fh.write(values.astype("<f4").tobytes())
        fh.write(actions.astype("<u2").tobytes())


def read_policy(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a policy file -> (values float64, actions uint16)."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputOutputError(f"cannot read policy file {path}: {exc}") from exc
    if len(data) < len(_POLICY_MAGIC) + 8 or data[: len(_POLICY_MAGIC)] != _POLICY_MAGIC:
        raise InputOutputError(f"{path} is not a policy file (bad magic)")
    off = len(_POLICY_MAGIC)
    version, n_states = struct.unpack_from("<II", data, off)
    off += 8
    if version != _POLICY_VERSION:
        raise InputOutputError(f"unsupported policy file version {version}")
    expected = off + 4 * n_states + 2 * (n_states - 1)
    if len(data) != expected:
        raise InputOutputError(f"policy file {path} is truncated or padded")
    values = np.frombuffer(data, dtype="<f4", count=n_states, offset=off).astype(
        np.float64
    )
    actions = np.frombuffer(
        data, dtype="<u2", count=n_states - 1, offset=off + 4 * n_states
    ).astype(np.uint16)
    return values, actions


def write_trajectories_csv(path, ensemble) -> None:
    """Write one CSV row per trajectory step (plus arrival rows).

    Floats are formatted with repr (shortest round-trip), so files are
    byte-stable for identical inputs.
    """
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for tr in ensemble.trajectories:
            for step, t, x, y, action, reward, cum, status in tr.rows:
                writer.writerow(
                    [
                        tr.realization,
                        step,
                        t,
                        repr(float(x)),
                        repr(float(y)),
                        action,
                        repr(float(reward)),
                        repr(float(cum)),
                        status,
                    ]
                )


def write_summary_json(path, summary: dict) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")


def read_summary_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputOutputError(f"cannot read summary {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputOutputError(f"malformed summary {path}: {exc}") from exc
