"""HTTP service wrapping the pipeline.

Deployment shape: a FastAPI app owns all pipeline execution; the CLI is a
thin client that posts requests to it (in-process by default, over the
network with --server). Requests carry config file paths, not config
bodies, so the service reads exactly the same files an operator would
audit; responses are the stage info dicts.

Domain errors surface as JSON ``{"category": ..., "message": ...}`` with a
4xx status per category; a verification run that completes but finds
failures is NOT an HTTP error (the report comes back with 200 and
``passed: false``).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__, pipeline
from .config import load_bench_config, load_env_config, load_run_config
from .errors import FlowMdpError

_STATUS_BY_CATEGORY = {
    "config": 400,
    "io": 404,
    "contract": 422,
    "verification": 409,
}


class GenerateEnvRequest(BaseModel):
    config_path: str
    out: str


class StageRequest(BaseModel):
    config_path: str
    threads: int | None = None


class BenchRequest(BaseModel):
    config_path: str
    out: str


class GenerateEnvResponse(BaseModel):
    out: str
    kind: str
    nx: int
    ny: int
    nt: int
    n_modes: int
    n_realizations: int


class BuildResponse(BaseModel):
    out: str
    n_states: int
    n_actions: int
    nt: int
    nnz_total: int
    subgrid_half_width_x: int
    subgrid_half_width_y: int
    threads: int
    build_seconds: float


class SolveResponse(BaseModel):
    out: str
    iterations_run: int
    residual: float
    converged: bool


def create_app() -> FastAPI:
    app = FastAPI(title="flowmdp", version=__version__)

    @app.exception_handler(FlowMdpError)
    async def _domain_error(request: Request, exc: FlowMdpError):
        return JSONResponse(
            status_code=_STATUS_BY_CATEGORY.get(exc.category, 500),
            content={"category": exc.category, "message": str(exc)},
        )

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/generate-env", response_model=GenerateEnvResponse)
    def generate_env(req: GenerateEnvRequest):
        return pipeline.run_generate_env(load_env_config(req.config_path), req.out)

    @app.post("/reduce")
    def reduce(req: StageRequest) -> dict:
        return pipeline.run_reduce(load_run_config(req.config_path))

    @app.post("/build", response_model=BuildResponse)
    def build(req: StageRequest):
        return pipeline.run_build(load_run_config(req.config_path), threads=req.threads)

    @app.post("/solve", response_model=SolveResponse)
    def solve(req: StageRequest):
        return pipeline.run_solve(load_run_config(req.config_path))

    @app.post("/rollout")
    def rollout(req: StageRequest) -> dict:
        return pipeline.run_rollout(load_run_config(req.config_path), threads=req.threads)

    @app.post("/verify")
    def verify(req: StageRequest) -> dict:
        return pipeline.run_verify(load_run_config(req.config_path))

    @app.post("/bench")
    def bench(req: BenchRequest) -> dict:
        return pipeline.run_bench(load_bench_config(req.config_path), req.out)

    return app
