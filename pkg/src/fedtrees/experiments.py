"""Experiment drivers for the hourly load-forecasting study.

Every entry point takes an :class:`~fedtrees.config.ExperimentConfig` and
returns a :class:`RunArtifacts`: a structured report plus the output files as
in-memory text, so the same functions back the command line, the HTTP service,
and the tests without touching the filesystem themselves.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from fedtrees import __version__, mlp
from fedtrees.config import ExperimentConfig
from fedtrees.dataset import (
    CANONICAL_FEATURES,
    DEFAULT_COLUMN_MAP,
    ScalerParams,
    SupervisedSet,
    apply_scaler,
    build_supervised,
    fit_scaler,
    inverse_target,
    load_csv,
    resample_hourly,
    split,
    supervised_csv_text,
)
from fedtrees.errors import ConfigError, DataError, ModelFormatError
from fedtrees.federation import (
    FedAvgConfig,
    FederatedData,
    RoundRecord,
    build_clients,
    checkpoint_text,
    fedavg_run,
    fedtrees_run,
    read_round_log,
    round_log_text,
)
from fedtrees.gbdt import Ensemble, boost, deserialize, feature_importance, serialize
from fedtrees.metrics import EvalResult, evaluate, persistence_predictions
from fedtrees.synth import synthetic_records

REPORT_HEADER = (
    "algorithm",
    "mae",
    "mape",
    "rounds",
    "computation_seconds",
    "wall_seconds",
    "config_hash",
    "seed",
    "version",
)

FORECAST_HOURS = 72


@dataclass(frozen=True)
class ReportRow:
    """One line of the result table: an algorithm and its test-set scores."""

    algorithm: str
    mae: float
    mape: float
    rounds: int
    computation_seconds: float
    wall_seconds: float


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ReportRow, ...]
    config_hash: str
    seed: int
    version: str = __version__

    def csv_text(self) -> str:
        lines = [",".join(REPORT_HEADER)]
        for row in self.rows:
            lines.append(
                ",".join(
                    (
                        row.algorithm,
                        repr(float(row.mae)),
                        repr(float(row.mape)),
                        str(int(row.rounds)),
                        repr(float(row.computation_seconds)),
                        repr(float(row.wall_seconds)),
                        self.config_hash,
                        str(int(self.seed)),
                        self.version,
                    )
                )
            )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunArtifacts:
    """Output of one experiment entry point.

    ``files`` maps artifact file names to their full text content; ``report``
    is present for entry points that produce a result table.
    """

    files: dict[str, str] = field(default_factory=dict)
    report: ExperimentReport | None = None

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, content in self.files.items():
            path = out / name
            path.write_text(content)
            written.append(path)
        return written


class _Stopwatch:
    """Wall timer that reads 0.0 when timing is disabled, keeping runs with
    identical config and seed byte-identical on disk."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        if not self.enabled:
            return 0.0
        return time.perf_counter() - self._start


def _csv_text(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _timestamp_str(ts) -> str:
    return np.datetime_as_string(np.datetime64(ts, "s"))


def load_hourly(config: ExperimentConfig):
    """Materialise the hourly records for ``config``.

    Returns ``(hourly, n_zones)``. Synthetic data is generated from the run
    seed; a real CSV is read with the configured column mapping.
    """
    if config.data.synthetic:
        records = synthetic_records(
            n_days=config.data.synthetic_days,
            seed=config.seed,
            n_zones=config.data.synthetic_zones,
        )
        n_zones = config.data.synthetic_zones
    else:
        column_map = dict(DEFAULT_COLUMN_MAP)
        if config.data.columns:
            column_map.update(config.data.columns)
        records = load_csv(config.data.path, column_map=column_map)
        n_zones = len(column_map["zone_power"])
    return resample_hourly(records), n_zones


def _importance_ranking(config: ExperimentConfig, hourly) -> tuple[str, ...]:
    """Feature names ranked by total split gain of a pooled-target model."""
    sup = build_supervised(hourly, CANONICAL_FEATURES)
    train, _, _ = split(sup, config.split)
    scaler = fit_scaler(train)
    model = boost(apply_scaler(train, scaler), config.gbdt.params, config.gbdt.n_batches)
    return tuple(name for name, _ in feature_importance(model).ranked(by="gain"))


def resolve_feature_subset(config: ExperimentConfig, hourly) -> tuple[str, ...]:
    """The feature columns this run trains on, in canonical order."""
    subset = config.features.subset
    if subset == "all":
        return CANONICAL_FEATURES
    if subset == "top-k":
        ranked = _importance_ranking(config, hourly)
        chosen = ranked[: config.features.k]
        return tuple(sorted(chosen, key=CANONICAL_FEATURES.index))
    return tuple(subset)


def prepare_data(config: ExperimentConfig) -> RunArtifacts:
    """Write the pooled supervised view (unscaled) as ``prepared.csv``."""
    hourly, _ = load_hourly(config)
    names = resolve_feature_subset(config, hourly)
    sup = build_supervised(hourly, names)
    return RunArtifacts(files={"prepared.csv": supervised_csv_text(sup)})


@dataclass(frozen=True)
class _CentralData:
    names: tuple[str, ...]
    scaler: ScalerParams
    train: SupervisedSet
    validation: SupervisedSet
    test: SupervisedSet


def _central_data(config: ExperimentConfig, hourly, names) -> _CentralData:
    sup = build_supervised(hourly, names)
    train, validation, test = split(sup, config.split)
    scaler = fit_scaler(train)
    return _CentralData(
        names=names,
        scaler=scaler,
        train=apply_scaler(train, scaler),
        validation=apply_scaler(validation, scaler),
        test=apply_scaler(test, scaler),
    )


def _train_central(config: ExperimentConfig, data: _CentralData):
    """Fit the configured centralized model.

    Returns ``(label, scaled test predictions, model document, rounds,
    computation seconds)``.
    """
    watch = _Stopwatch(config.federation.measure_time)
    if config.model_kind == "gbdt":
        model = boost(data.train, config.gbdt.params, config.gbdt.n_batches)
        comp = watch.elapsed()
        preds = model.predict(data.test.features)
        return "gbdt", preds, serialize(model), config.gbdt.n_batches, comp
    arch = mlp.MlpArch(n_inputs=len(data.names), hidden=config.mlp.hidden)
    rng = np.random.default_rng(config.seed)
    flat = mlp.init_params(arch, rng)
    flat = mlp.sgd_epochs(
        arch,
        flat,
        data.train.features,
        data.train.target,
        config.mlp.opt,
        config.mlp.epochs,
        config.mlp.batch_size,
        rng,
    )
    comp = watch.elapsed()
    preds = mlp.predict(arch, flat, data.test.features)
    doc = mlp.serialize_mlp(arch, flat, context="centralized", feature_names=data.names)
    return "mlp", preds, doc, config.mlp.epochs, comp


def _central_eval(data: _CentralData, preds_scaled) -> EvalResult:
    y_raw = inverse_target(data.test.target, data.scaler)
    y_hat_raw = inverse_target(preds_scaled, data.scaler)
    return evaluate(data.test.target, preds_scaled, y_raw, y_hat_raw)


def _central_persistence(data: _CentralData) -> EvalResult:
    series = np.concatenate(([data.validation.target[-1]], data.test.target))
    raw = inverse_target(series, data.scaler)
    y, y_hat = persistence_predictions(series)
    ry, ry_hat = persistence_predictions(raw)
    return evaluate(y, y_hat, ry, ry_hat)


def _report(config: ExperimentConfig, rows) -> ExperimentReport:
    return ExperimentReport(
        rows=tuple(rows), config_hash=config.config_hash(), seed=config.seed
    )


def run_centralized(config: ExperimentConfig) -> RunArtifacts:
    """Train the pooled-data baseline and score it on the held-out test set."""
    watch = _Stopwatch(config.federation.measure_time)
    hourly, _ = load_hourly(config)
    names = resolve_feature_subset(config, hourly)
    data = _central_data(config, hourly, names)
    label, preds, model_doc, rounds, comp = _train_central(config, data)
    scored = _central_eval(data, preds)
    naive = _central_persistence(data)
    wall = watch.elapsed()
    report = _report(
        config,
        [
            ReportRow(label, scored.mae, scored.mape, rounds, comp, wall),
            ReportRow("persistence", naive.mae, naive.mape, 0, 0.0, 0.0),
        ],
    )
    files = {"report.csv": report.csv_text(), "model.json": model_doc + "\n"}
    return RunArtifacts(files=files, report=report)


@dataclass(frozen=True)
class _FederatedBundle:
    fd: FederatedData
    names: tuple[str, ...]
    n_zones: int


def _prepare_federated(config: ExperimentConfig) -> _FederatedBundle:
    hourly, n_zones = load_hourly(config)
    names = resolve_feature_subset(config, hourly)
    fd = build_clients(hourly, n_zones, feature_subset=names, split_spec=config.split)
    return _FederatedBundle(fd=fd, names=names, n_zones=n_zones)


def _pooled_persistence(fd: FederatedData) -> EvalResult:
    ys, yhs, rys, ryhs = [], [], [], []
    for zone in range(len(fd.scalers)):
        vmask = fd.validation_zone == zone
        tmask = fd.test_zone == zone
        series = np.concatenate(
            ([fd.validation.target[vmask][-1]], fd.test.target[tmask])
        )
        raw = inverse_target(series, fd.scalers[zone])
        y, y_hat = persistence_predictions(series)
        ry, ry_hat = persistence_predictions(raw)
        ys.append(y)
        yhs.append(y_hat)
        rys.append(ry)
        ryhs.append(ry_hat)
    return evaluate(
        np.concatenate(ys),
        np.concatenate(yhs),
        np.concatenate(rys),
        np.concatenate(ryhs),
    )


@dataclass(frozen=True)
class _FederatedOutcome:
    label: str
    scored: EvalResult
    naive: EvalResult
    n_rounds: int
    computation_seconds: float
    records: tuple[RoundRecord, ...]
    model_doc: str
    checkpoint_doc: str
    n_clients: int


def _run_federated_once(
    config: ExperimentConfig, bundle: _FederatedBundle, stopper_config
) -> _FederatedOutcome:
    fd = bundle.fd
    measure = config.federation.measure_time
    if config.federation.algorithm == "fedtrees":
        result = fedtrees_run(
            fd.clients,
            fd.validation,
            config.gbdt.params,
            config.federation.max_rounds,
            stopper_config,
            measure_time=measure,
        )
        preds = result.model.predict(fd.test.features)
        label = "fedtrees"
        model_doc = serialize(result.model)
    else:
        avg_config = FedAvgConfig(
            hidden=config.mlp.hidden,
            opt=config.mlp.opt,
            max_rounds=config.federation.max_rounds,
            client_fraction=config.federation.client_fraction,
            epochs_per_round=config.federation.epochs_per_round,
            batch_size=config.mlp.batch_size,
            seed=config.seed,
        )
        result = fedavg_run(
            fd.clients, fd.validation, avg_config, stopper_config, measure_time=measure
        )
        preds = mlp.predict(result.arch, result.params, fd.test.features)
        label = "fedavg"
        model_doc = mlp.serialize_mlp(
            result.arch,
            result.params,
            context="federated",
            feature_names=fd.validation.feature_names,
        )
    y_hat_raw = fd.descale_target(preds, fd.test_zone)
    scored = evaluate(fd.test.target, preds, fd.raw_test_target(), y_hat_raw)
    return _FederatedOutcome(
        label=label,
        scored=scored,
        naive=_pooled_persistence(fd),
        n_rounds=result.n_rounds,
        computation_seconds=result.total_wall_s,
        records=tuple(result.rounds),
        model_doc=model_doc,
        checkpoint_doc=checkpoint_text(result.checkpoint()),
        n_clients=len(fd.clients),
    )


def run_federated(config: ExperimentConfig) -> RunArtifacts:
    """Run the configured federation and score the shared model per zone."""
    watch = _Stopwatch(config.federation.measure_time)
    bundle = _prepare_federated(config)
    outcome = _run_federated_once(
        config, bundle, config.federation.resolved_stopper()
    )
    wall = watch.elapsed()
    report = _report(
        config,
        [
            ReportRow(
                outcome.label,
                outcome.scored.mae,
                outcome.scored.mape,
                outcome.n_rounds,
                outcome.computation_seconds,
                wall,
            ),
            ReportRow(
                "persistence", outcome.naive.mae, outcome.naive.mape, 0, 0.0, 0.0
            ),
        ],
    )
    files = {
        "report.csv": report.csv_text(),
        "round_log.csv": round_log_text(outcome.records, outcome.n_clients),
        "model.json": outcome.model_doc + "\n",
        "checkpoint.json": outcome.checkpoint_doc,
    }
    return RunArtifacts(files=files, report=report)


def run_feature_importance(config: ExperimentConfig) -> RunArtifacts:
    """Rank features of a pooled-target model by split count and total gain."""
    hourly, _ = load_hourly(config)
    data = _central_data(config, hourly, CANONICAL_FEATURES)
    model = boost(data.train, config.gbdt.params, config.gbdt.n_batches)
    imp = feature_importance(model)
    total_gain = float(imp.gain_totals.sum())
    index = {name: i for i, name in enumerate(imp.feature_names)}
    rows = []
    for name, gain in imp.ranked(by="gain"):
        i = index[name]
        share = gain / total_gain if total_gain > 0.0 else 0.0
        rows.append((name, str(int(imp.split_counts[i])), repr(gain), repr(share)))
    text = _csv_text(("feature", "split_count", "total_gain", "gain_share"), rows)
    return RunArtifacts(files={"importance.csv": text})


def run_feature_sweep(config: ExperimentConfig, ks=None) -> RunArtifacts:
    """Retrain on the top-k ranked features for each k and tabulate scores."""
    hourly, _ = load_hourly(config)
    ranked = _importance_ranking(config, hourly)
    if ks is None:
        ks = range(1, len(ranked) + 1)
    rows = []
    for k in ks:
        k = int(k)
        if not 1 <= k <= len(ranked):
            raise ConfigError(f"k must be in 1..{len(ranked)}, got {k}")
        names = tuple(sorted(ranked[:k], key=CANONICAL_FEATURES.index))
        data = _central_data(config, hourly, names)
        _, preds, _, _, _ = _train_central(config, data)
        scored = _central_eval(data, preds)
        rows.append(
            (str(k), "|".join(names), repr(float(scored.mae)), repr(float(scored.mape)))
        )
    text = _csv_text(("k", "features", "mae", "mape"), rows)
    return RunArtifacts(files={"feature_sweep.csv": text})


def run_stopper_grid(config: ExperimentConfig, deltas=None, windows=None) -> RunArtifacts:
    """Sweep the early-stopping (delta, window) grid over one federated setup."""
    from fedtrees.federation import StopperConfig

    if deltas is None:
        deltas = (1e-3, 1e-4, 1e-5)
    if windows is None:
        windows = (1, 5, 10)
    bundle = _prepare_federated(config)
    rows = []
    for delta in deltas:
        for window in windows:
            stopper = StopperConfig(delta=float(delta), window=int(window))
            outcome = _run_federated_once(config, bundle, stopper)
            rows.append(
                (
                    repr(float(delta)),
                    str(int(window)),
                    repr(float(outcome.scored.mae)),
                    repr(float(outcome.scored.mape)),
                    str(int(outcome.n_rounds)),
                    repr(float(outcome.computation_seconds)),
                )
            )
    text = _csv_text(
        ("delta", "window", "mae", "mape", "rounds", "computation_seconds"), rows
    )
    return RunArtifacts(files={"stopper_grid.csv": text})


def _convergence_text(records) -> str:
    post = np.array([r.post_mae for r in records], dtype=np.float64)
    best = np.minimum.accumulate(post) if post.size else post
    rows = [
        (str(int(r.round_index)), repr(float(r.post_mae)), repr(float(best[i])))
        for i, r in enumerate(records)
    ]
    return _csv_text(("round", "post_mae", "best_mae"), rows)


def _forecast_rows_central(config, hourly, predict, names):
    data = _central_data(config, hourly, names)
    preds = predict(data.test.features)
    n = min(FORECAST_HOURS, data.test.target.size)
    actual = inverse_target(data.test.target[:n], data.scaler)
    predicted = inverse_target(preds[:n], data.scaler)
    stamps = data.test.timestamps[:n]
    return [
        (_timestamp_str(stamps[i]), repr(float(actual[i])), repr(float(predicted[i])))
        for i in range(n)
    ]


def _forecast_rows_federated(config, hourly, n_zones, predict, names):
    fd = build_clients(hourly, n_zones, feature_subset=names, split_spec=config.split)
    preds = predict(fd.test.features)
    raw_pred = fd.descale_target(preds, fd.test_zone)
    raw_actual = fd.raw_test_target()
    per_zone_pred = []
    per_zone_actual = []
    stamps = None
    for zone in range(n_zones):
        mask = fd.test_zone == zone
        per_zone_pred.append(raw_pred[mask])
        per_zone_actual.append(raw_actual[mask])
        if stamps is None:
            stamps = [ts for ts, keep in zip(fd.test.timestamps, mask) if keep]
    agg_pred = np.sum(per_zone_pred, axis=0)
    agg_actual = np.sum(per_zone_actual, axis=0)
    n = min(FORECAST_HOURS, agg_actual.size)
    return [
        (_timestamp_str(stamps[i]), repr(float(agg_actual[i])), repr(float(agg_pred[i])))
        for i in range(n)
    ]


def _forecast_text(config: ExperimentConfig, model_path) -> str:
    try:
        text = Path(model_path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read model file {model_path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    fmt = doc.get("format")
    hourly, n_zones = load_hourly(config)
    if fmt == "fedtrees-ensemble":
        model = deserialize(text)
        names = model.feature_names
        federated = any(
            not isinstance(batch.producer_id, str) for batch in model.batches
        )
        predict = model.predict
    elif fmt == "fedtrees-mlp":
        arch, flat, context, names = mlp.deserialize_mlp(text)
        if names is None:
            raise ModelFormatError(
                "network document lacks feature names; cannot rebuild its inputs"
            )
        federated = context == "federated"

        def predict(X, arch=arch, flat=flat):
            return mlp.predict(arch, flat, X)

    else:
        raise ModelFormatError(f"unknown model format {fmt!r}")
    if federated:
        rows = _forecast_rows_federated(config, hourly, n_zones, predict, names)
    else:
        rows = _forecast_rows_central(config, hourly, predict, names)
    return _csv_text(("timestamp", "actual_kw", "predicted_kw"), rows)


def emit_curves(
    config: ExperimentConfig, round_log=None, model=None
) -> RunArtifacts:
    """Derive plot-ready curves from a finished run.

    ``round_log`` yields ``convergence.csv`` (per-round and best-so-far
    validation MAE); ``model`` yields ``forecast_72h.csv`` (a three-day
    actual-versus-predicted window on the held-out test set, in kW).
    """
    if round_log is None and model is None:
        raise ConfigError("emit-curves needs a round log, a model file, or both")
    files = {}
    if round_log is not None:
        records = read_round_log(round_log)
        files["convergence.csv"] = _convergence_text(records)
    if model is not None:
        files["forecast_72h.csv"] = _forecast_text(config, model)
    return RunArtifacts(files=files)
