"""JSON run configuration.

Everything that affects results lives in config files; command-line flags
only select files, thread counts, and output paths, so a run is fully
reproducible from its config plus the code version. Two kinds of file
exist: an environment-generation config (grid, flow, scalar field,
obstacles, seed) and a run config (paths, objective, rewards, actions,
start/target, solver and build knobs). Unknown keys are rejected:
a typo silently ignored is a misconfigured run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .environment import GridSpec
from .errors import ConfigError
from .model_builder import OBJECTIVES
from .synthesis import DoubleGyreConfig, ObstacleConfig, RadiationConfig


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return data


def _check_keys(data: dict, allowed, where: str) -> None:
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {where}")


def _get_num(data: dict, key: str, default=None, where: str = "config"):
    val = data.get(key, default)
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise ConfigError(f"{where}: {key} must be a number, got {val!r}")
    return val


def _get_int(data: dict, key: str, default=None, where: str = "config"):
    val = data.get(key, default)
    if not isinstance(val, int) or isinstance(val, bool):
        raise ConfigError(f"{where}: {key} must be an integer, got {val!r}")
    return val


def _get_cell(data: dict, key: str, where: str):
    val = data.get(key)
    if val is None:
        return None
    if (
        not isinstance(val, (list, tuple))
        or len(val) != 2
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in val)
    ):
        raise ConfigError(f"{where}: {key} must be a [i, j] integer pair, got {val!r}")
    return (val[0], val[1])


def parse_grid(data: dict, where: str = "grid") -> GridSpec:
    _check_keys(data, {"nx", "ny", "nt", "dx", "dt", "origin"}, where)
    origin = data.get("origin", [0.0, 0.0])
    if not isinstance(origin, (list, tuple)) or len(origin) != 2:
        raise ConfigError(f"{where}: origin must be an [x, y] pair")
    return GridSpec(
        nx=_get_int(data, "nx", where=where),
        ny=_get_int(data, "ny", where=where),
        nt=_get_int(data, "nt", where=where),
        dx=float(_get_num(data, "dx", where=where)),
        dt=float(_get_num(data, "dt", where=where)),
        origin=(float(origin[0]), float(origin[1])),
    )


@dataclass(frozen=True)
class EnvGenConfig:
    """Everything generate-env needs: grid, flow, scalar, obstacles, seed."""

    flow: DoubleGyreConfig
    radiation: RadiationConfig
    obstacles: ObstacleConfig
    emit_raw: bool = False


_ENV_KEYS = {
    "grid",
    "amplitude",
    "eps",
    "n_modes",
    "n_realizations",
    "seed",
    "radiation",
    "obstacles",
    "emit_raw",
}


def env_config_from_dict(data: dict, where: str = "env config") -> EnvGenConfig:
    _check_keys(data, _ENV_KEYS, where)
    if "grid" not in data or not isinstance(data["grid"], dict):
        raise ConfigError(f"{where}: missing grid section")
    grid = parse_grid(data["grid"], f"{where}:grid")

    flow = DoubleGyreConfig(
        grid=grid,
        amplitude=float(_get_num(data, "amplitude", 0.4, where)),
        eps=float(_get_num(data, "eps", 0.2, where)),
        n_modes=_get_int(data, "n_modes", 8, where),
        n_realizations=_get_int(data, "n_realizations", 100, where),
        rng_seed=_get_int(data, "seed", 0, where),
    )

    rad = data.get("radiation", {})
    if not isinstance(rad, dict):
        raise ConfigError(f"{where}: radiation must be an object")
    _check_keys(rad, {"base_level", "cloud_speed", "cloud_width"}, f"{where}:radiation")
    radiation = RadiationConfig(
        grid=grid,
        base_level=float(_get_num(rad, "base_level", 1.0, "radiation")),
        cloud_speed=float(_get_num(rad, "cloud_speed", 0.5, "radiation")),
        cloud_width=float(_get_num(rad, "cloud_width", 4.0, "radiation")),
    )

    obs = data.get("obstacles", {})
    if not isinstance(obs, dict):
        raise ConfigError(f"{where}: obstacles must be an object")
    _check_keys(
        obs, {"side", "entry_time", "speed", "initial_positions"}, f"{where}:obstacles"
    )
    positions = obs.get("initial_positions", [])
    if not isinstance(positions, list):
        raise ConfigError(f"{where}: obstacles.initial_positions must be a list")
    parsed_positions = []
    for p in positions:
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ConfigError(f"{where}: each obstacle position must be an [i, j] pair")
        parsed_positions.append((int(p[0]), int(p[1])))
    side = _get_int(obs, "side", 1, "obstacles")
    if side < 1:
        raise ConfigError(f"{where}: obstacles.side must be >= 1")
    obstacles = ObstacleConfig(
        grid=grid,
        side=side,
        entry_time=_get_int(obs, "entry_time", 0, "obstacles"),
        speed=float(_get_num(obs, "speed", 0.0, "obstacles")),
        initial_positions=tuple(parsed_positions),
    )

    emit_raw = data.get("emit_raw", False)
    if not isinstance(emit_raw, bool):
        raise ConfigError(f"{where}: emit_raw must be true or false")
    return EnvGenConfig(
        flow=flow, radiation=radiation, obstacles=obstacles, emit_raw=emit_raw
    )


def load_env_config(path) -> EnvGenConfig:
    return env_config_from_dict(_load_json(path), str(path))


@dataclass(frozen=True)
class RunConfig:
    """Pipeline run parameters; each subcommand reads the fields it needs."""

    environment: str | None = None
    raw: str | None = None
    model: str | None = None
    policy: str | None = None
    trajectories: str | None = None
    summary: str | None = None
    objective: str = "time"
    c_f: float = 1.0
    c_r: float = 1.0
    r_term: float = 100.0
    r_outbound: float = -1000.0
    n_headings: int = 8
    n_speeds: int = 2
    f_max: float = 1.0
    start: tuple | None = None
    target: tuple | None = None
    epsilon: float = 1e-8
    max_iterations: int | None = None
    threads: int = 1
    seed: int = 0
    subgrid_buffer: int = 1
    n_modes: int | None = None

    def require(self, *fields_needed: str):
        """Fetch config fields a subcommand cannot run without."""
        out = []
        for name in fields_needed:
            val = getattr(self, name)
            if val is None:
                raise ConfigError(f"run config is missing required field {name!r}")
            out.append(val)
        return out[0] if len(out) == 1 else out


_RUN_KEYS = {
    "environment",
    "raw",
    "model",
    "policy",
    "trajectories",
    "summary",
    "objective",
    "c_f",
    "c_r",
    "r_term",
    "r_outbound",
    "n_headings",
    "n_speeds",
    "f_max",
    "start",
    "target",
    "epsilon",
    "max_iterations",
    "threads",
    "seed",
    "subgrid_buffer",
    "n_modes",
}


def run_config_from_dict(data: dict, where: str = "run config") -> RunConfig:
    _check_keys(data, _RUN_KEYS, where)

    def _opt_str(key):
        val = data.get(key)
        if val is not None and not isinstance(val, str):
            raise ConfigError(f"{where}: {key} must be a string path")
        return val

    objective = data.get("objective", "time")
    if objective not in OBJECTIVES:
        raise ConfigError(
            f"{where}: objective must be one of {OBJECTIVES}, got {objective!r}"
        )
    start = _get_cell(data, "start", where)
    target = _get_cell(data, "target", where)
    if start is not None and target is not None and start == target:
        raise ConfigError(f"{where}: start and target must differ")
    max_iterations = data.get("max_iterations")
    if max_iterations is not None and (
        not isinstance(max_iterations, int) or isinstance(max_iterations, bool)
    ):
        raise ConfigError(f"{where}: max_iterations must be an integer or null")
    n_modes = data.get("n_modes")
    if n_modes is not None and (not isinstance(n_modes, int) or isinstance(n_modes, bool)):
        raise ConfigError(f"{where}: n_modes must be an integer")
    threads = _get_int(data, "threads", 1, where)
    if threads < 1:
        raise ConfigError(f"{where}: threads must be >= 1")

    return RunConfig(
        environment=_opt_str("environment"),
        raw=_opt_str("raw"),
        model=_opt_str("model"),
        policy=_opt_str("policy"),
        trajectories=_opt_str("trajectories"),
        summary=_opt_str("summary"),
        objective=objective,
        c_f=float(_get_num(data, "c_f", 1.0, where)),
        c_r=float(_get_num(data, "c_r", 1.0, where)),
        r_term=float(_get_num(data, "r_term", 100.0, where)),
        r_outbound=float(_get_num(data, "r_outbound", -1000.0, where)),
        n_headings=_get_int(data, "n_headings", 8, where),
        n_speeds=_get_int(data, "n_speeds", 2, where),
        f_max=float(_get_num(data, "f_max", 1.0, where)),
        start=start,
        target=target,
        epsilon=float(_get_num(data, "epsilon", 1e-8, where)),
        max_iterations=max_iterations,
        threads=threads,
        seed=_get_int(data, "seed", 0, where),
        subgrid_buffer=_get_int(data, "subgrid_buffer", 1, where),
        n_modes=n_modes,
    )


def load_run_config(path) -> RunConfig:
    return run_config_from_dict(_load_json(path), str(path))


@dataclass(frozen=True)
class BenchConfig:
    """Thread-scaling benchmark: env-generation configs x thread counts."""

    sizes: tuple
    thread_counts: tuple
    run: RunConfig


def load_bench_config(path) -> BenchConfig:
    data = _load_json(path)
    _check_keys(data, {"sizes", "thread_counts", "run"}, str(path))
    sizes = data.get("sizes")
    if not isinstance(sizes, list) or not sizes:
        raise ConfigError(f"{path}: sizes must be a non-empty list of env configs")
    threads = data.get("thread_counts")
    if (
        not isinstance(threads, list)
        or not threads
        or not all(isinstance(t, int) and not isinstance(t, bool) and t >= 1 for t in threads)
    ):
        raise ConfigError(f"{path}: thread_counts must be a list of integers >= 1")
    run_raw = data.get("run", {})
    if not isinstance(run_raw, dict):
        raise ConfigError(f"{path}: run must be an object")
    size_cfgs = tuple(
        env_config_from_dict(entry, f"{path}:sizes[{idx}]")
        if isinstance(entry, dict)
        else _reject_size(path, idx)
        for idx, entry in enumerate(sizes)
    )
    return BenchConfig(
        sizes=size_cfgs,
        thread_counts=tuple(threads),
        run=run_config_from_dict(run_raw, f"{path}:run"),
    )


def _reject_size(path, idx):
    raise ConfigError(f"{path}: sizes[{idx}] must be an object")
