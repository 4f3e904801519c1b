"""Simulated client/server orchestration for round-based federated training.

Two protocols share the same skeleton. In the tree protocol every client
trains one batch of boosted trees per round against the shared cumulative
ensemble; the server scores each candidate (current model plus that batch)
on its validation set, keeps the batch with the lowest MAE, and discards
the rest. In the averaging protocol sampled clients fine-tune the current
network locally and the server replaces it with the data-size-weighted
mean of their parameter vectors.

Rounds are a strict barrier and 1-based. All selection and aggregation is
keyed by client id, never by arrival order, so permuting the client list
changes nothing. Round wall time charges the slowest client (clients run
conceptually in parallel) plus the server's evaluation.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fedtrees import mlp
from fedtrees.dataset import (
    SplitSpec,
    SupervisedSet,
    apply_scaler,
    build_supervised,
    concat_supervised,
    fit_scaler,
    split,
)
from fedtrees.errors import ConfigError, DataError
from fedtrees.gbdt import (
    Ensemble,
    GbdtParams,
    batch_predict,
    bin_matrix,
    build_histograms,
    deserialize,
    serialize,
    train_batch,
)
from fedtrees.metrics import mae

FEDERATED_BASE_SCORE = 0.5

CHECKPOINT_FORMAT = "fedtrees-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class StopperConfig:
    """Improvement threshold and patience for delta-based early stopping."""

    delta: float = 1e-5
    window: int = 10

    def validate(self) -> None:
        if self.delta < 0.0:
            raise ConfigError(f"stopper delta must be >= 0, got {self.delta}")
        if self.window < 1:
            raise ConfigError(f"stopper window must be >= 1, got {self.window}")


@dataclass
class EarlyStopper:
    """Tracks the best validation score and stalls since it last improved.

    A score counts as an improvement only when it beats the best by more
    than ``delta``; ``window`` consecutive non-improvements stop the run.
    The snapshot passed with each improving score is kept so the best model
    survives the stall that triggers the stop.
    """

    config: StopperConfig
    best_score: float = math.inf
    best_round: int = 0
    stall: int = 0
    best_model: object = None

    def observe(self, round_index: int, score: float, snapshot) -> bool:
        """Record one round's score; True means training should stop now."""
        if not math.isfinite(score):
            raise DataError(f"round {round_index}: validation score {score} is not finite")
        if self.best_score - score > self.config.delta:
            self.best_score = score
            self.best_round = round_index
            self.best_model = snapshot
            self.stall = 0
        else:
            self.stall += 1
        return self.stall >= self.config.window

    def state_dict(self) -> dict:
        return {
            "delta": self.config.delta,
            "window": self.config.window,
            "best_score": self.best_score,
            "best_round": self.best_round,
            "stall": self.stall,
        }

    @classmethod
    def from_state(cls, state: dict, best_model=None) -> "EarlyStopper":
        stopper = cls(config=StopperConfig(delta=state["delta"], window=state["window"]))
        stopper.best_score = float(state["best_score"])
        stopper.best_round = int(state["best_round"])
        stopper.stall = int(state["stall"])
        stopper.best_model = best_model
        return stopper


@dataclass(frozen=True)
class RoundRecord:
    """One round of telemetry.

    ``selected`` is the winning client id in the tree protocol and the L2
    norm of the aggregated parameter vector in the averaging protocol.
    ``client_maes`` holds NaN for clients not sampled this round.
    ``elapsed_s`` is cumulative wall time through this round.
    """

    round_index: int
    client_maes: tuple[float, ...]
    selected: int | float
    post_mae: float
    elapsed_s: float


@dataclass(frozen=True)
class ClientData:
    """One simulated client: an id and the training rows that never leave it."""

    client_id: int
    train: SupervisedSet


def _check_clients(clients, validation: SupervisedSet) -> list[ClientData]:
    # Returned sorted by id: protocol results must not depend on the order
    # clients were handed in.
    clients = sorted(clients, key=lambda c: c.client_id)
    if not clients:
        raise ConfigError("at least one client is required")
    ids = [c.client_id for c in clients]
    if ids != list(range(len(clients))):
        raise ConfigError(f"client ids must be 0..{len(clients) - 1} with no repeats, got {sorted(ids)}")
    if validation.n_rows == 0:
        raise DataError("server validation set is empty")
    for c in clients:
        if c.train.n_rows == 0:
            raise DataError(f"client {c.client_id} has no training rows")
        if c.train.feature_names != validation.feature_names:
            raise DataError(
                f"client {c.client_id} features {c.train.feature_names} do not match "
                f"validation features {validation.feature_names}"
            )
    return clients


class _Timer:
    """perf_counter when timing is on; a constant zero when runs must be byte-stable."""

    def __init__(self, enabled: bool):
        self.enabled = enabled

    def now(self) -> float:
        return time.perf_counter() if self.enabled else 0.0


@dataclass
class _TreeClientRuntime:
    data: ClientData
    bins: object
    binned: np.ndarray
    model: Ensemble
    margin: np.ndarray


@dataclass(frozen=True)
class FedTreesResult:
    model: Ensemble
    final_model: Ensemble
    stopper: EarlyStopper
    rounds: tuple[RoundRecord, ...]
    best_round: int
    best_mae: float
    total_wall_s: float
    stopped_early: bool

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def checkpoint(self) -> "TreeCheckpoint":
        """State a later call can resume from (next round after the last run one)."""
        last = self.rounds[-1].round_index if self.rounds else 0
        return TreeCheckpoint(model=self.final_model, stopper=self.stopper,
                              next_round=last + 1, elapsed_s=self.total_wall_s)


def fedtrees_run(clients, validation: SupervisedSet, params: GbdtParams,
                 max_rounds: int, stopper_config: StopperConfig, *,
                 measure_time: bool = True, on_round=None,
                 resume: "TreeCheckpoint | None" = None) -> FedTreesResult:
    """Run the tree-batch selection protocol until the stopper fires.

    Every client trains every round; the accepted batch is appended to the
    shared ensemble and all local models advance in lockstep. The returned
    model is the stopper's best snapshot, which is always a round-prefix of
    the final accepted ensemble. A default ``base_score`` resolves to 0.5
    here: no party may see the pooled target mean.
    """
    params.validate()
    stopper_config.validate()
    if max_rounds < 1:
        raise ConfigError(f"max_rounds must be >= 1, got {max_rounds}")
    clients = _check_clients(clients, validation)

    base = params.base_score if params.base_score is not None else FEDERATED_BASE_SCORE
    if resume is None:
        global_model = Ensemble(params=params, base_score=base,
                                feature_names=validation.feature_names)
        stopper = EarlyStopper(config=stopper_config)
        first_round = 1
        cumulative = 0.0
    else:
        global_model = resume.model
        if global_model.params != params:
            raise ConfigError("checkpoint params do not match the requested params")
        stopper = resume.stopper
        if stopper.config != stopper_config:
            raise ConfigError("checkpoint stopper settings do not match the requested ones")
        first_round = resume.next_round
        cumulative = resume.elapsed_s

    lr = params.learning_rate
    runtimes = []
    for c in clients:
        bins = build_histograms(c.train, params.max_bins)
        margin = np.full(c.train.n_rows, base, dtype=np.float64)
        # Replaying batch-by-batch reproduces the exact float accumulation
        # order of the uninterrupted run, so resume is bit-faithful.
        for batch in global_model.batches:
            margin = margin + batch_predict(batch, c.train.features, lr)
        runtimes.append(_TreeClientRuntime(
            data=c, bins=bins, binned=bin_matrix(c.train.features, bins),
            model=global_model, margin=margin,
        ))
    val_margin = np.full(validation.n_rows, base, dtype=np.float64)
    for batch in global_model.batches:
        val_margin = val_margin + batch_predict(batch, validation.features, lr)

    timer = _Timer(measure_time)
    n_clients = len(clients)
    records: list[RoundRecord] = []
    stopped = False
    for r in range(first_round, max_rounds + 1):
        candidates: dict[int, object] = {}
        client_wall = 0.0
        for rt in runtimes:
            t0 = timer.now()
            batch = train_batch(rt.model, rt.data.train, round_index=r,
                                producer_id=rt.data.client_id, bins=rt.bins,
                                binned=rt.binned, base_margin=rt.margin)
            client_wall = max(client_wall, timer.now() - t0)
            candidates[rt.data.client_id] = batch

        t0 = timer.now()
        maes = []
        contribs = []
        for cid in range(n_clients):
            contrib = batch_predict(candidates[cid], validation.features, lr)
            contribs.append(contrib)
            maes.append(mae(validation.target, val_margin + contrib))
        selected = 0
        for cid in range(1, n_clients):
            if maes[cid] < maes[selected]:
                selected = cid
        accepted = candidates[selected]
        global_model = global_model.with_batch(accepted)
        val_margin = val_margin + contribs[selected]
        post_mae = maes[selected]
        server_wall = timer.now() - t0

        for rt in runtimes:
            rt.model = global_model
            rt.margin = rt.margin + batch_predict(accepted, rt.data.train.features, lr)

        cumulative += client_wall + server_wall
        record = RoundRecord(round_index=r, client_maes=tuple(maes), selected=selected,
                             post_mae=post_mae, elapsed_s=cumulative)
        records.append(record)
        if on_round is not None:
            on_round(record)
        if stopper.observe(r, post_mae, global_model):
            stopped = True
            break

    best = stopper.best_model
    if best is None:
        best = global_model
    else:
        # The snapshot is the full ensemble as of the best round; keep only
        # the batches accepted by then.
        best = replace(best, batches=best.batches[:stopper.best_round])
    return FedTreesResult(model=best, final_model=global_model, stopper=stopper,
                          rounds=tuple(records),
                          best_round=stopper.best_round, best_mae=stopper.best_score,
                          total_wall_s=cumulative, stopped_early=stopped)


@dataclass(frozen=True)
class FedAvgConfig:
    """Settings for the averaging protocol (Algorithm: sample, train, average)."""

    hidden: tuple[int, ...] = (64,)
    opt: mlp.SgdConfig = mlp.SgdConfig()
    max_rounds: int = 2000
    client_fraction: float = 1.0
    epochs_per_round: int = 5
    batch_size: int = 30
    seed: int = 0

    def validate(self) -> None:
        self.opt.validate()
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigError(f"client_fraction must be in (0, 1], got {self.client_fraction}")
        if self.max_rounds < 1:
            raise ConfigError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.epochs_per_round < 1:
            raise ConfigError(f"epochs_per_round must be >= 1, got {self.epochs_per_round}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")


def weighted_average(vectors, sizes) -> np.ndarray:
    """Data-size-weighted mean of parameter vectors: sum of (n_k / n) * w_k.

    Computed as first vector plus weighted corrections, which is the same
    sum algebraically but keeps identical inputs an exact fixed point.
    """
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    sizes = [int(s) for s in sizes]
    if not vectors or len(vectors) != len(sizes):
        raise ConfigError(f"{len(vectors)} vectors with {len(sizes)} sizes")
    if any(s <= 0 for s in sizes):
        raise ConfigError(f"client sizes must be positive, got {sizes}")
    total = float(sum(sizes))
    base = vectors[0]
    out = base.copy()
    for v, nk in zip(vectors, sizes):
        if v.shape != out.shape:
            raise DataError(f"parameter vector shapes differ: {v.shape} vs {out.shape}")
        out += (nk / total) * (v - base)
    return out


@dataclass(frozen=True)
class FedAvgResult:
    arch: mlp.MlpArch
    params: np.ndarray
    final_params: np.ndarray
    stopper: EarlyStopper
    rounds: tuple[RoundRecord, ...]
    best_round: int
    best_mae: float
    total_wall_s: float
    stopped_early: bool

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)

    def checkpoint(self) -> "AvgCheckpoint":
        """State a later call can resume from (next round after the last run one)."""
        last = self.rounds[-1].round_index if self.rounds else 0
        return AvgCheckpoint(arch=self.arch, params=self.final_params,
                             stopper=self.stopper, next_round=last + 1,
                             elapsed_s=self.total_wall_s)


def fedavg_run(clients, validation: SupervisedSet, config: FedAvgConfig,
               stopper_config: StopperConfig, *, measure_time: bool = True,
               on_round=None, resume: "AvgCheckpoint | None" = None) -> FedAvgResult:
    """Run the averaging protocol until the stopper fires.

    Each round samples ceil(client_fraction * K) clients without
    replacement. A sampled client reseeds its shuffling stream from
    (seed, round, client id), so results do not depend on the order clients
    happen to run in.
    """
    config.validate()
    stopper_config.validate()
    clients = _check_clients(clients, validation)
    n_clients = len(clients)
    by_id = {c.client_id: c for c in clients}

    arch = mlp.MlpArch(n_inputs=validation.n_features, hidden=config.hidden)
    root_rng = np.random.default_rng(config.seed)
    weights = mlp.init_params(arch, root_rng)
    m = max(1, math.ceil(config.client_fraction * n_clients))

    if resume is None:
        stopper = EarlyStopper(config=stopper_config)
        first_round = 1
        cumulative = 0.0
    else:
        if resume.arch != arch:
            raise ConfigError("checkpoint network shape does not match the requested one")
        stopper = resume.stopper
        if stopper.config != stopper_config:
            raise ConfigError("checkpoint stopper settings do not match the requested ones")
        weights = np.array(resume.params, dtype=np.float64)
        first_round = resume.next_round
        cumulative = resume.elapsed_s
        # Replay the sampling draws of completed rounds so the stream of
        # this run continues exactly where the interrupted one left off.
        for _ in range(1, first_round):
            root_rng.choice(n_clients, size=m, replace=False)

    timer = _Timer(measure_time)
    records: list[RoundRecord] = []
    stopped = False
    for r in range(first_round, config.max_rounds + 1):
        sampled = sorted(int(i) for i in root_rng.choice(n_clients, size=m, replace=False))
        updates: dict[int, np.ndarray] = {}
        client_wall = 0.0
        maes = [math.nan] * n_clients
        for cid in sampled:
            c = by_id[cid]
            t0 = timer.now()
            client_rng = np.random.default_rng([config.seed, r, cid])
            updated = mlp.sgd_epochs(arch, weights, c.train.features, c.train.target,
                                     config.opt, config.epochs_per_round,
                                     config.batch_size, client_rng)
            client_wall = max(client_wall, timer.now() - t0)
            updates[cid] = updated
        t0 = timer.now()
        for cid in sampled:
            maes[cid] = mae(validation.target,
                            mlp.predict(arch, updates[cid], validation.features))
        weights = weighted_average([updates[cid] for cid in sampled],
                                   [by_id[cid].train.n_rows for cid in sampled])
        post_mae = mae(validation.target, mlp.predict(arch, weights, validation.features))
        server_wall = timer.now() - t0

        cumulative += client_wall + server_wall
        record = RoundRecord(round_index=r, client_maes=tuple(maes),
                             selected=float(np.linalg.norm(weights)),
                             post_mae=post_mae, elapsed_s=cumulative)
        records.append(record)
        if on_round is not None:
            on_round(record)
        if stopper.observe(r, post_mae, weights.copy()):
            stopped = True
            break

    best = stopper.best_model if stopper.best_model is not None else weights.copy()
    return FedAvgResult(arch=arch, params=best, final_params=weights.copy(),
                        stopper=stopper, rounds=tuple(records),
                        best_round=stopper.best_round, best_mae=stopper.best_score,
                        total_wall_s=cumulative, stopped_early=stopped)


@dataclass(frozen=True)
class FederatedData:
    """Per-client training sets plus the server's pooled evaluation slices.

    Clients are one-per-zone: each predicts its own zone's next-hour load
    and sees its own zone's lag under the shared lag column name. Pooled
    validation/test rows are tagged with the zone they came from so raw-unit
    metrics can unscale per zone.
    """

    clients: tuple[ClientData, ...]
    validation: SupervisedSet
    test: SupervisedSet
    validation_zone: np.ndarray
    test_zone: np.ndarray
    scalers: tuple

    def descale_target(self, values: np.ndarray, zone_tags: np.ndarray) -> np.ndarray:
        """Map scaled target values back to raw units, per row's source zone."""
        from fedtrees.dataset import inverse_target

        values = np.asarray(values, dtype=np.float64)
        out = np.empty_like(values)
        for z, scaler in enumerate(self.scalers):
            mask = zone_tags == z
            out[mask] = inverse_target(values[mask], scaler)
        return out

    def raw_test_target(self) -> np.ndarray:
        return self.descale_target(self.test.target, self.test_zone)


def build_clients(hourly, n_zones: int, *, feature_subset=None,
                  split_spec: SplitSpec = SplitSpec()) -> FederatedData:
    """Cut one client per zone and pool their held-out slices for the server.

    Each zone's supervised set is split chronologically and min-max scaled
    by its own train-slice statistics; the server's validation and test
    sets are the concatenation of the per-zone slices in zone order.
    """
    if not hourly:
        raise DataError("no hourly records to build clients from")
    have = len(hourly[0].zone_power)
    if n_zones < 1 or n_zones > have:
        raise DataError(f"requested {n_zones} zones but the data has {have}")
    clients = []
    val_parts, test_parts = [], []
    val_zones, test_zones = [], []
    scalers = []
    for z in range(n_zones):
        sup = build_supervised(hourly, feature_subset=feature_subset, target_spec=z)
        train, val, test = split(sup, split_spec)
        scaler = fit_scaler(train)
        scalers.append(scaler)
        clients.append(ClientData(client_id=z, train=apply_scaler(train, scaler)))
        val_parts.append(apply_scaler(val, scaler))
        test_parts.append(apply_scaler(test, scaler))
        val_zones.append(np.full(val.n_rows, z, dtype=np.int64))
        test_zones.append(np.full(test.n_rows, z, dtype=np.int64))
    return FederatedData(
        clients=tuple(clients),
        validation=concat_supervised(val_parts),
        test=concat_supervised(test_parts),
        validation_zone=np.concatenate(val_zones),
        test_zone=np.concatenate(test_zones),
        scalers=tuple(scalers),
    )


def round_log_text(records, n_clients: int) -> str:
    """Render the round log CSV: round, per-client MAEs, selected, post MAE, time."""
    header = ["round"] + [f"client_{i}_mae" for i in range(n_clients)]
    header += ["selected", "post_mae", "elapsed_s"]
    lines = [",".join(header)]
    for rec in records:
        if len(rec.client_maes) != n_clients:
            raise DataError(
                f"round {rec.round_index} has {len(rec.client_maes)} client columns, "
                f"expected {n_clients}"
            )
        cells = [str(rec.round_index)]
        cells += [repr(float(v)) for v in rec.client_maes]
        sel = rec.selected
        cells.append(str(sel) if isinstance(sel, int) else repr(float(sel)))
        cells.append(repr(float(rec.post_mae)))
        cells.append(repr(float(rec.elapsed_s)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_round_log(records, path, n_clients: int) -> None:
    """Emit the round log CSV to a file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(round_log_text(records, n_clients), encoding="utf-8")


def read_round_log(path) -> list[RoundRecord]:
    """Parse a round log CSV back into records."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"round log does not exist: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:1] != ["round"] or header[-3:] != ["selected", "post_mae", "elapsed_s"]:
            raise DataError(f"not a round log (header {header!r}): {path}")
        n_clients = len(header) - 4
        records = []
        for line_no, line in enumerate(fh, start=2):
            cells = line.strip().split(",")
            if len(cells) != len(header):
                raise DataError(f"{path}:{line_no}: {len(cells)} cells, expected {len(header)}")
            sel_text = cells[1 + n_clients]
            selected = int(sel_text) if "." not in sel_text and "n" not in sel_text else float(sel_text)
            records.append(RoundRecord(
                round_index=int(cells[0]),
                client_maes=tuple(float(v) for v in cells[1:1 + n_clients]),
                selected=selected,
                post_mae=float(cells[2 + n_clients]),
                elapsed_s=float(cells[3 + n_clients]),
            ))
    return records


@dataclass(frozen=True)
class TreeCheckpoint:
    """Resumable tree-protocol state: accepted model, stopper, next round."""

    model: Ensemble
    stopper: EarlyStopper
    next_round: int
    elapsed_s: float


@dataclass(frozen=True)
class AvgCheckpoint:
    """Resumable averaging-protocol state: current parameters, stopper, next round."""

    arch: mlp.MlpArch
    params: np.ndarray
    stopper: EarlyStopper
    next_round: int
    elapsed_s: float


def checkpoint_text(checkpoint) -> str:
    """Render either checkpoint kind as canonical JSON."""
    if isinstance(checkpoint, TreeCheckpoint):
        kind = "fedtrees"
        model_doc = json.loads(serialize(checkpoint.model))
        best_doc = None
    elif isinstance(checkpoint, AvgCheckpoint):
        kind = "fedavg"
        model_doc = json.loads(mlp.serialize_mlp(checkpoint.arch, checkpoint.params,
                                                 context="federated"))
        best = checkpoint.stopper.best_model
        best_doc = None if best is None else json.loads(
            mlp.serialize_mlp(checkpoint.arch, best, context="federated"))
    else:
        raise ConfigError(f"not a checkpoint: {type(checkpoint).__name__}")
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "next_round": checkpoint.next_round,
        "elapsed_s": checkpoint.elapsed_s,
        "stopper": checkpoint.stopper.state_dict(),
        "model": model_doc,
        "best_model": best_doc,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def save_checkpoint(checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(checkpoint_text(checkpoint), encoding="utf-8")


def load_checkpoint(path):
    """Load a checkpoint file; returns a TreeCheckpoint or an AvgCheckpoint."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint does not exist: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid checkpoint at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"not a checkpoint file: {path}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
    stopper_state = doc["stopper"]
    next_round = int(doc["next_round"])
    elapsed = float(doc["elapsed_s"])
    kind = doc.get("kind")
    if kind == "fedtrees":
        model = deserialize(json.dumps(doc["model"]))
        best_round = int(stopper_state["best_round"])
        best = replace(model, batches=model.batches[:best_round]) if best_round else None
        stopper = EarlyStopper.from_state(stopper_state, best_model=best)
        return TreeCheckpoint(model=model, stopper=stopper, next_round=next_round,
                              elapsed_s=elapsed)
    if kind == "fedavg":
        arch, params, _, _ = mlp.deserialize_mlp(json.dumps(doc["model"]))
        best = None
        if doc.get("best_model") is not None:
            _, best, _, _ = mlp.deserialize_mlp(json.dumps(doc["best_model"]))
        stopper = EarlyStopper.from_state(stopper_state, best_model=best)
        return AvgCheckpoint(arch=arch, params=params, stopper=stopper,
                             next_round=next_round, elapsed_s=elapsed)
    raise DataError(f"unknown checkpoint kind {kind!r}")
