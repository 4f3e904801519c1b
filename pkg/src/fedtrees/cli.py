"""Command line client for the experiment service.

Each subcommand submits one run to the service and writes the returned
artifact files locally. By default the service runs in-process; ``--server``
targets an already-running instance instead.

Exit codes: 0 success, 2 configuration error, 3 data or model-format error,
4 any other failure.
"""

from __future__ import annotations

import sys
import warnings
from pathlib import Path

import click

from fedtrees import __version__
from fedtrees.config import tomllib

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

POLL_WAIT_S = 10.0


class Session:
    """Transport to the service: in-process app or a remote base URL."""

    def __init__(self, server: str | None):
        if server is None:
            # The import can emit third-party deprecation chatter; keep it
            # out of run output, it is not actionable here.
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from fedtrees.service import create_app

            self._client = TestClient(create_app())
        else:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=POLL_WAIT_S * 2)

    def post(self, path: str, payload: dict):
        return self._client.post(path, json=payload)

    def get(self, path: str, params: dict | None = None):
        return self._client.get(path, params=params)


class State:
    def __init__(self, config_path, seed, out_dir, quiet, server):
        self.config_path = config_path
        self.seed = seed
        self.out_dir = out_dir
        self.quiet = quiet
        self.server = server
        self._session = None

    @property
    def session(self) -> Session:
        if self._session is None:
            self._session = Session(self.server)
        return self._session


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_text(path, exit_code: int, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        _fail(exit_code, f"cannot read {what} {path}: {exc}")


def _submit_and_wait(state: State, operation: str, extra: dict | None = None) -> dict:
    payload: dict = {"operation": operation}
    if state.config_path is not None:
        payload["config_toml"] = _read_text(state.config_path, EXIT_CONFIG, "config file")
    if state.seed is not None:
        payload["seed"] = state.seed
    if extra:
        payload.update(extra)
    try:
        response = state.session.post("/runs", payload)
    except Exception as exc:
        _fail(EXIT_RUNTIME, f"cannot reach service: {exc}")
    if response.status_code != 200:
        _fail(EXIT_RUNTIME, f"service returned {response.status_code}: {response.text}")
    job = response.json()
    while job["state"] in ("queued", "running"):
        try:
            response = state.session.get(
                f"/runs/{job['job_id']}", params={"wait_s": POLL_WAIT_S}
            )
        except Exception as exc:
            _fail(EXIT_RUNTIME, f"lost connection to service: {exc}")
        if response.status_code != 200:
            _fail(
                EXIT_RUNTIME, f"service returned {response.status_code}: {response.text}"
            )
        job = response.json()
    if job["state"] == "error":
        error = job.get("error") or {}
        kind = error.get("kind", "runtime")
        code = {"config": EXIT_CONFIG, "data": EXIT_DATA}.get(kind, EXIT_RUNTIME)
        _fail(code, error.get("message", "run failed"))
    return job


def _resolve_out_dir(state: State, operation: str) -> Path:
    if state.out_dir is not None:
        return Path(state.out_dir)
    if state.config_path is not None:
        try:
            data = tomllib.loads(Path(state.config_path).read_text())
        except Exception:
            data = {}
        configured = data.get("out_dir")
        if configured:
            return Path(configured)
    return Path("runs") / operation


def _deliver(state: State, operation: str, job: dict):
    out_dir = _resolve_out_dir(state, operation)
    files = job.get("files") or {}
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, content in sorted(files.items()):
        (out_dir / name).write_text(content)
    if state.quiet:
        return
    report = job.get("report")
    if report:
        header = f"{'algorithm':<14} {'mae':>12} {'mape':>10} {'rounds':>7} {'comp_s':>10} {'wall_s':>10}"
        click.echo(header)
        for row in report["rows"]:
            click.echo(
                f"{row['algorithm']:<14} {row['mae']:>12.6f} {row['mape']:>10.4f} "
                f"{row['rounds']:>7d} {row['computation_seconds']:>10.3f} "
                f"{row['wall_seconds']:>10.3f}"
            )
        click.echo(f"config {report['config_hash']} seed {report['seed']} version {report['version']}")
    for name in sorted(files):
        click.echo(f"wrote {out_dir / name}")


def _common_options(command):
    for option in (
        click.option("--server", default=None, metavar="URL", help="base URL of a running service (default: in-process)"),
        click.option("--quiet", is_flag=True, help="suppress progress and report output"),
        click.option("--out-dir", default=None, type=click.Path(file_okay=False), help="directory for artifact files"),
        click.option("--seed", default=None, type=int, help="override the configured seed"),
        click.option("--config", "config_path", default=None, type=click.Path(dir_okay=False), help="TOML configuration file"),
    ):
        command = option(command)
    return command


@click.group()
@click.version_option(version=__version__, prog_name="fedtrees")
def main():
    """Federated gradient-boosted trees for short-term load forecasting."""


def _simple_command(name: str, operation: str, help_text: str):
    @main.command(name, help=help_text)
    @_common_options
    def command(config_path, seed, out_dir, quiet, server):
        state = State(config_path, seed, out_dir, quiet, server)
        job = _submit_and_wait(state, operation)
        _deliver(state, operation, job)

    return command


_simple_command(
    "prepare-data",
    "prepare-data",
    "Build the hourly supervised dataset and write prepared.csv.",
)
_simple_command(
    "centralized",
    "centralized",
    "Train the pooled-data model and report test MAE and MAPE.",
)
_simple_command(
    "federated",
    "federated",
    "Run the configured federation and report test MAE and MAPE.",
)
_simple_command(
    "feature-importance",
    "feature-importance",
    "Rank features by split count and total gain.",
)


@main.command("sweep-features", help="Retrain on top-k feature subsets for each k.")
@click.option("--k", "ks", multiple=True, type=int, help="feature count to evaluate (repeatable; default: every k)")
@_common_options
def sweep_features(ks, config_path, seed, out_dir, quiet, server):
    state = State(config_path, seed, out_dir, quiet, server)
    extra = {"ks": list(ks)} if ks else None
    job = _submit_and_wait(state, "sweep-features", extra)
    _deliver(state, "sweep-features", job)


@main.command("sweep-stopper", help="Sweep the early-stopping (delta, window) grid.")
@click.option("--delta", "deltas", multiple=True, type=float, help="improvement threshold (repeatable)")
@click.option("--window", "windows", multiple=True, type=int, help="patience window (repeatable)")
@_common_options
def sweep_stopper(deltas, windows, config_path, seed, out_dir, quiet, server):
    state = State(config_path, seed, out_dir, quiet, server)
    extra: dict = {}
    if deltas:
        extra["deltas"] = list(deltas)
    if windows:
        extra["windows"] = list(windows)
    job = _submit_and_wait(state, "sweep-stopper", extra or None)
    _deliver(state, "sweep-stopper", job)


@main.command("serve", help="Run the experiment service over HTTP.")
@click.option("--host", default="127.0.0.1", show_default=True, help="bind address")
@click.option("--port", default=8420, show_default=True, type=int, help="bind port")
def serve(host, port):
    import uvicorn

    from fedtrees.service import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command("emit-curves", help="Derive convergence and 72-hour forecast curves from a finished run.")
@click.option("--round-log", "round_log", default=None, type=click.Path(dir_okay=False), help="round log CSV from a federated run")
@click.option("--model", "model", default=None, type=click.Path(dir_okay=False), help="serialized model document")
@_common_options
def emit_curves(round_log, model, config_path, seed, out_dir, quiet, server):
    state = State(config_path, seed, out_dir, quiet, server)
    if round_log is None and model is None:
        _fail(EXIT_CONFIG, "emit-curves needs --round-log, --model, or both")
    extra: dict = {}
    if round_log is not None:
        extra["round_log_text"] = _read_text(round_log, EXIT_DATA, "round log")
    if model is not None:
        extra["model_text"] = _read_text(model, EXIT_DATA, "model file")
    job = _submit_and_wait(state, "emit-curves", extra)
    _deliver(state, "emit-curves", job)


if __name__ == "__main__":
    main()
