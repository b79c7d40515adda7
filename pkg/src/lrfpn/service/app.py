"""FastAPI application exposing the runners.

The service is stateless: every request carries its full config, every
response carries everything the caller needs to materialize artifacts
(report text, csv text, base64 checkpoints).  Domain rejections map to
422 so clients can distinguish "bad request" from "check failed", which
travels inside a 200 body.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, ShapeError
from ..runners import (
    run_ablate,
    run_bench,
    run_gradcheck,
    run_oracle,
    run_shapes,
    run_train,
)
from .schemas import (
    AblateRequest,
    AblateResponse,
    BenchResponse,
    GradcheckRequest,
    GradcheckResponse,
    HealthResponse,
    OracleResponse,
    RunRequest,
    ShapesResponse,
    TrainResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(title="lrfpn", version=__version__)

    @app.exception_handler(ConfigError)
    @app.exception_handler(ShapeError)
    async def _reject(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/v1/shapes", response_model=ShapesResponse)
    def shapes(req: RunRequest) -> dict:
        return run_shapes(req.config)

    @app.post("/v1/gradcheck", response_model=GradcheckResponse)
    def gradcheck(req: GradcheckRequest) -> dict:
        return run_gradcheck(req.config, probes_per_param=req.probes_per_param)

    @app.post("/v1/oracle", response_model=OracleResponse)
    def oracle(req: RunRequest) -> dict:
        return run_oracle(req.config)

    @app.post("/v1/train-toy", response_model=TrainResponse)
    def train_toy(req: RunRequest) -> dict:
        return run_train(req.config)

    @app.post("/v1/ablate", response_model=AblateResponse)
    def ablate(req: AblateRequest) -> dict:
        return run_ablate(req.config, presets=req.presets, seeds=req.seeds)

    @app.post("/v1/bench", response_model=BenchResponse)
    def bench(req: RunRequest) -> dict:
        return run_bench(req.config)

    return app
