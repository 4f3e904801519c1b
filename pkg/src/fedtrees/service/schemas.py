"""Request and response bodies for the experiment service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

Operation = Literal[
    "prepare-data",
    "centralized",
    "federated",
    "feature-importance",
    "sweep-features",
    "sweep-stopper",
    "emit-curves",
]


class RunRequest(BaseModel):
    """Start one experiment operation.

    The configuration travels as TOML text or an equivalent nested mapping;
    inputs to ``emit-curves`` travel as file content, so the service never
    reads the client's filesystem.
    """

    model_config = ConfigDict(extra="forbid")

    operation: Operation
    config_toml: str | None = Field(default=None, description="TOML configuration text")
    config: dict | None = Field(
        default=None, description="configuration as a nested mapping (alternative to config_toml)"
    )
    seed: int | None = Field(default=None, description="override the configured seed")
    ks: list[int] | None = Field(
        default=None, description="sweep-features: feature counts to evaluate"
    )
    deltas: list[float] | None = Field(
        default=None, description="sweep-stopper: improvement thresholds"
    )
    windows: list[int] | None = Field(
        default=None, description="sweep-stopper: patience windows"
    )
    round_log_text: str | None = Field(
        default=None, description="emit-curves: content of a round log CSV"
    )
    model_text: str | None = Field(
        default=None, description="emit-curves: content of a serialized model document"
    )


class ErrorInfo(BaseModel):
    kind: Literal["config", "data", "runtime"]
    message: str


class ReportRowModel(BaseModel):
    algorithm: str
    mae: float
    mape: float
    rounds: int
    computation_seconds: float
    wall_seconds: float


class ReportModel(BaseModel):
    rows: list[ReportRowModel]
    config_hash: str
    seed: int
    version: str


class RunStatus(BaseModel):
    job_id: str
    operation: Operation
    state: Literal["queued", "running", "done", "error"]
    error: ErrorInfo | None = None
    report: ReportModel | None = None
    files: dict[str, str] | None = Field(
        default=None, description="artifact file name to content; set once the run is done"
    )


class RunList(BaseModel):
    runs: list[RunStatus]


class HealthInfo(BaseModel):
    status: Literal["ok"]
    version: str
