"""HTTP front end: every experiment operation behind a small job API.

POST /runs starts an operation and returns its job id; GET /runs/{id} polls
it (optionally blocking up to ``wait_s`` seconds). Artifact files come back
inline as text, so the service works without any shared filesystem.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query

from fedtrees import __version__, experiments
from fedtrees.config import ExperimentConfig, from_dict, tomllib
from fedtrees.errors import ConfigError
from fedtrees.service.jobs import Job, JobStore
from fedtrees.service.schemas import (
    ErrorInfo,
    HealthInfo,
    ReportModel,
    ReportRowModel,
    RunList,
    RunRequest,
    RunStatus,
)


def build_request_config(request: RunRequest) -> ExperimentConfig:
    if request.config_toml is not None and request.config is not None:
        raise ConfigError("give config_toml or config, not both")
    if request.config_toml is not None:
        try:
            data = tomllib.loads(request.config_toml)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        config = from_dict(data)
    elif request.config is not None:
        config = from_dict(request.config)
    else:
        config = ExperimentConfig()
    if request.seed is not None:
        config = config.with_overrides(seed=request.seed)
    config.validate()
    return config


def execute_request(request: RunRequest) -> experiments.RunArtifacts:
    config = build_request_config(request)
    operation = request.operation
    if operation == "prepare-data":
        return experiments.prepare_data(config)
    if operation == "centralized":
        return experiments.run_centralized(config)
    if operation == "federated":
        return experiments.run_federated(config)
    if operation == "feature-importance":
        return experiments.run_feature_importance(config)
    if operation == "sweep-features":
        return experiments.run_feature_sweep(config, ks=request.ks)
    if operation == "sweep-stopper":
        return experiments.run_stopper_grid(
            config, deltas=request.deltas, windows=request.windows
        )
    if operation == "emit-curves":
        if request.round_log_text is None and request.model_text is None:
            raise ConfigError(
                "emit-curves needs round_log_text, model_text, or both"
            )
        with tempfile.TemporaryDirectory() as tmp:
            round_log = model = None
            if request.round_log_text is not None:
                round_log = Path(tmp) / "round_log.csv"
                round_log.write_text(request.round_log_text)
            if request.model_text is not None:
                model = Path(tmp) / "model.json"
                model.write_text(request.model_text)
            return experiments.emit_curves(config, round_log=round_log, model=model)
    raise ConfigError(f"unknown operation {operation!r}")


def job_status(job: Job, include_files: bool = True) -> RunStatus:
    error = None
    report = None
    files = None
    if job.state == "error":
        error = ErrorInfo(kind=job.error_kind, message=job.error_message)
    if job.state == "done" and job.artifacts is not None:
        if job.artifacts.report is not None:
            src = job.artifacts.report
            report = ReportModel(
                rows=[
                    ReportRowModel(
                        algorithm=row.algorithm,
                        mae=row.mae,
                        mape=row.mape,
                        rounds=row.rounds,
                        computation_seconds=row.computation_seconds,
                        wall_seconds=row.wall_seconds,
                    )
                    for row in src.rows
                ],
                config_hash=src.config_hash,
                seed=src.seed,
                version=src.version,
            )
        if include_files:
            files = dict(job.artifacts.files)
    return RunStatus(
        job_id=job.job_id,
        operation=job.operation,
        state=job.state,
        error=error,
        report=report,
        files=files,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="fedtrees", version=__version__)
    store = JobStore()
    app.state.jobs = store

    @app.get("/health", response_model=HealthInfo)
    def health() -> HealthInfo:
        return HealthInfo(status="ok", version=__version__)

    @app.post("/runs", response_model=RunStatus, response_model_exclude_none=True)
    def start_run(request: RunRequest) -> RunStatus:
        job = store.submit(request.operation, lambda: execute_request(request))
        return job_status(job, include_files=False)

    @app.get("/runs", response_model=RunList, response_model_exclude_none=True)
    def list_runs() -> RunList:
        return RunList(
            runs=[job_status(job, include_files=False) for job in store.all()]
        )

    @app.get("/runs/{job_id}", response_model=RunStatus, response_model_exclude_none=True)
    def get_run(
        job_id: str,
        wait_s: float = Query(default=0.0, ge=0.0, le=600.0),
    ) -> RunStatus:
        job = store.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"no such run {job_id!r}")
        if wait_s > 0.0:
            job.done.wait(timeout=wait_s)
        return job_status(job)

    return app
