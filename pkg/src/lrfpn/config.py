"""Run configuration, metrics rows, and the injectable clock.

RunConfig round-trips through a flat "key=value" text form so a run can
be reproduced from the file it was launched with.  MetricsRecord is one
row of metrics.csv; float fields are written with repr so a written file
parses back to the exact same numbers.
"""

from __future__ import annotations

import time
from typing import Callable, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .flags import Flags, parse_flags
from .pyramid import SPECS, ModelSpec
from .tensor import DTYPES


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    model: Literal["default", "mini"] = "default"
    seed: int = Field(default=0, ge=0)
    steps: int = Field(default=300, ge=1)
    batch_size: int = Field(default=4, ge=1)
    n_batches: int = Field(default=8, ge=1)
    lr: float = Field(default=0.01, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    weight_decay: float = Field(default=1e-4, ge=0)
    flags: str = ""
    dtype: Literal["f64", "f32"] = "f64"
    timer: Literal["perf", "fixed"] = "perf"

    @field_validator("flags")
    @classmethod
    def _flags_parse(cls, v: str) -> str:
        parse_flags(v)  # raises ConfigError on unknown tokens
        return v

    def parsed_flags(self) -> Flags:
        return parse_flags(self.flags)

    def model_spec(self) -> ModelSpec:
        return SPECS[self.model]

    def np_dtype(self) -> type:
        return DTYPES[self.dtype]

    def to_text(self) -> str:
        lines = [f"{k}={getattr(self, k)}" for k in sorted(type(self).model_fields)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        data: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            data[key.strip()] = value.strip()
        return cls.from_mapping(data)

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        try:
            return cls(**data)
        except ValidationError as err:
            issues = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in err.errors())
            raise ConfigError(f"bad run config: {issues}") from err


METRICS_HEADER = (
    "run_id,label,flags,seed,steps,initial_loss,final_loss,data_wall_s,train_wall_s,losses"
)


class MetricsRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_id: str
    label: str
    flags: str
    seed: int
    steps: int
    initial_loss: float
    final_loss: float
    data_wall_s: float
    train_wall_s: float
    losses: list[float]

    @field_validator("run_id", "label", "flags")
    @classmethod
    def _csv_safe(cls, v: str) -> str:
        if any(ch in v for ch in ",;\n"):
            raise ConfigError(f"field value {v!r} would corrupt the csv")
        return v

    def to_row(self) -> str:
        return ",".join(
            [
                self.run_id,
                self.label,
                self.flags,
                str(self.seed),
                str(self.steps),
                repr(self.initial_loss),
                repr(self.final_loss),
                repr(self.data_wall_s),
                repr(self.train_wall_s),
                ";".join(repr(v) for v in self.losses),
            ]
        )

    @classmethod
    def from_row(cls, row: str) -> "MetricsRecord":
        parts = row.rstrip("\n").split(",")
        if len(parts) != 10:
            raise ConfigError(f"metrics row has {len(parts)} fields, expected 10")
        return cls(
            run_id=parts[0],
            label=parts[1],
            flags=parts[2],
            seed=int(parts[3]),
            steps=int(parts[4]),
            initial_loss=float(parts[5]),
            final_loss=float(parts[6]),
            data_wall_s=float(parts[7]),
            train_wall_s=float(parts[8]),
            losses=[float(v) for v in parts[9].split(";")] if parts[9] else [],
        )


def metrics_text(records: list[MetricsRecord]) -> str:
    """Rows sorted by (flags, seed) so output bytes never depend on run order."""
    ordered = sorted(records, key=lambda r: (r.flags, r.seed, r.run_id))
    return METRICS_HEADER + "\n" + "".join(r.to_row() + "\n" for r in ordered)


def write_metrics(path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(metrics_text(records))


def read_metrics(path) -> list[MetricsRecord]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ConfigError("metrics file header mismatch")
    return [MetricsRecord.from_row(line) for line in lines[1:] if line]


class FixedTimer:
    """Deterministic clock: advances one millisecond per call."""

    def __init__(self):
        self._ticks = 0

    def __call__(self) -> float:
        self._ticks += 1
        return self._ticks * 1e-3


def make_timer(kind: str) -> Callable[[], float]:
    if kind == "perf":
        return time.perf_counter
    if kind == "fixed":
        return FixedTimer()
    raise ConfigError(f"unknown timer {kind!r}, expected perf or fixed")
