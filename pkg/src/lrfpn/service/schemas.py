"""Request and response bodies for the HTTP endpoints.

Requests embed a full RunConfig so a run is reproducible from its JSON
body alone.  Response models mirror the runner payloads field for field;
FastAPI validates every response against them on the way out.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..config import MetricsRecord, RunConfig


class RunRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: RunConfig = Field(default_factory=RunConfig)


class GradcheckRequest(RunRequest):
    probes_per_param: int = Field(default=8, ge=1, le=64)


class AblateRequest(RunRequest):
    presets: tuple[str, ...] = ("baseline", "full")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)


class HealthResponse(BaseModel):
    status: str
    version: str


class ParamShape(BaseModel):
    name: str
    shape: list[int]


class ShapesResponse(BaseModel):
    model: str
    dtype: str
    input: list[int]
    features: dict[str, list[int]]
    pyramid: dict[str, list[int]]
    params: list[ParamShape]
    param_groups: dict[str, int]
    param_count: int


class GroupStat(BaseModel):
    probes: int
    max_rel_err: float


class GradcheckResponse(BaseModel):
    passed: bool
    max_rel_err: float
    tolerance: float
    n_probes: int
    groups: dict[str, GroupStat]
    fault_detected: bool
    fault_max_rel_err: float
    elapsed_s: float
    report: str


class OracleSection(BaseModel):
    name: str
    cases: int
    max_abs_diff: float | None
    failures: int
    ok: bool
    note: str


class OracleResponse(BaseModel):
    passed: bool
    sections: list[OracleSection]
    elapsed_s: float


class TrainResponse(BaseModel):
    record: MetricsRecord
    loss_drop: float
    metrics_csv: str
    checkpoint_name: str
    checkpoint_b64: str


class TwinCheck(BaseModel):
    seed: int
    trace_equal: bool
    outputs_equal: bool


class AblateResponse(BaseModel):
    presets: dict[str, str]
    seeds: list[int]
    rows: list[MetricsRecord]
    metrics_csv: str
    twin_checks: list[TwinCheck]
    twin_ok: bool


class BenchCase(BaseModel):
    name: str
    kind: str
    x_shape: list[int]
    w_shape: list[int]
    reps_naive: int
    reps_fast: int
    naive_s_per_rep: float
    fast_s_per_rep: float
    speedup: float
    max_abs_diff: float
    within_tolerance: bool


class BenchResponse(BaseModel):
    dtype: str
    timer: str
    tolerance: float
    target_speedup: float
    cases: list[BenchCase]
    mean_speedup: float
    min_speedup: float
    all_within_tolerance: bool
