"""Experiment configuration: TOML loading, strict validation, hashing.

Unknown keys anywhere in the file are errors; every setting has a default,
so the empty config is valid and runs the synthetic-data demo. The config
hash covers the fully resolved settings and is echoed into every report
row for provenance.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from fedtrees.dataset import CANONICAL_FEATURES, SplitSpec
from fedtrees.errors import ConfigError, DataError
from fedtrees.federation import StopperConfig
from fedtrees.gbdt import GbdtParams
from fedtrees.mlp import SgdConfig


@dataclass(frozen=True)
class DataConfig:
    """Where the raw 10-minute CSV comes from.

    With ``synthetic`` true the generator is used (seeded from the global
    seed) and ``path``, if set, is where the generated file is cached.
    """

    path: str | None = None
    synthetic: bool = True
    synthetic_days: int = 60
    synthetic_zones: int = 3
    columns: dict | None = None

    def validate(self) -> None:
        if not self.synthetic:
            if not self.path:
                raise ConfigError("data.path is required when data.synthetic is false")
            if not Path(self.path).exists():
                raise DataError(f"data file does not exist: {self.path}")
        if self.synthetic_days < 2:
            raise ConfigError(f"data.synthetic_days must be >= 2, got {self.synthetic_days}")
        if not 1 <= self.synthetic_zones <= 3:
            raise ConfigError(f"data.synthetic_zones must be 1..3, got {self.synthetic_zones}")


@dataclass(frozen=True)
class FeatureConfig:
    """Which canonical features feed the model: all, an explicit list, or top-k."""

    subset: str | tuple[str, ...] = "all"
    k: int = 4

    def validate(self) -> None:
        if isinstance(self.subset, str):
            if self.subset not in ("all", "top-k"):
                raise ConfigError(
                    f"features.subset must be 'all', 'top-k', or a list, got {self.subset!r}"
                )
        else:
            unknown = [f for f in self.subset if f not in CANONICAL_FEATURES]
            if unknown:
                raise ConfigError(f"features.subset names unknown features {unknown}")
            if not self.subset:
                raise ConfigError("features.subset list must not be empty")
        if not 1 <= self.k <= len(CANONICAL_FEATURES):
            raise ConfigError(f"features.k must be 1..{len(CANONICAL_FEATURES)}, got {self.k}")


@dataclass(frozen=True)
class CentralGbdtConfig:
    params: GbdtParams = GbdtParams()
    n_batches: int = 80

    def validate(self) -> None:
        self.params.validate()
        if self.n_batches < 1:
            raise ConfigError(f"model.gbdt.n_batches must be >= 1, got {self.n_batches}")


@dataclass(frozen=True)
class MlpTrainConfig:
    hidden: tuple[int, ...] = (64,)
    opt: SgdConfig = SgdConfig()
    epochs: int = 300
    batch_size: int = 30

    def validate(self) -> None:
        self.opt.validate()
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"model.mlp.hidden sizes must all be >= 1, got {list(self.hidden)}")
        if self.epochs < 1:
            raise ConfigError(f"model.mlp.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"model.mlp.batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class FederationSection:
    algorithm: str = "fedtrees"
    max_rounds: int = 2000
    client_fraction: float = 1.0
    epochs_per_round: int = 5
    measure_time: bool = True
    stopper: StopperConfig | None = None

    def validate(self) -> None:
        if self.algorithm not in ("fedtrees", "fedavg"):
            raise ConfigError(
                f"federation.algorithm must be 'fedtrees' or 'fedavg', got {self.algorithm!r}"
            )
        if self.max_rounds < 1:
            raise ConfigError(f"federation.max_rounds must be >= 1, got {self.max_rounds}")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigError(
                f"federation.client_fraction must be in (0, 1], got {self.client_fraction}"
            )
        if self.epochs_per_round < 1:
            raise ConfigError(
                f"federation.epochs_per_round must be >= 1, got {self.epochs_per_round}"
            )
        if self.stopper is not None:
            self.stopper.validate()

    def resolved_stopper(self) -> StopperConfig:
        """Patience defaults differ by algorithm: 10 for trees, 55 for averaging."""
        if self.stopper is not None:
            return self.stopper
        return StopperConfig(delta=1e-5, window=10 if self.algorithm == "fedtrees" else 55)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str | None = None
    model_kind: str = "gbdt"
    data: DataConfig = DataConfig()
    split: SplitSpec = SplitSpec()
    features: FeatureConfig = FeatureConfig()
    gbdt: CentralGbdtConfig = CentralGbdtConfig()
    mlp: MlpTrainConfig = MlpTrainConfig()
    federation: FederationSection = FederationSection()

    def validate(self) -> "ExperimentConfig":
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.model_kind not in ("gbdt", "mlp"):
            raise ConfigError(f"model.kind must be 'gbdt' or 'mlp', got {self.model_kind!r}")
        self.data.validate()
        self.features.validate()
        self.gbdt.validate()
        self.mlp.validate()
        self.federation.validate()
        return self

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["mlp"]["hidden"] = list(self.mlp.hidden)
        if not isinstance(self.features.subset, str):
            doc["features"]["subset"] = list(self.features.subset)
        return doc

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None,
                       out_dir: str | None = None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=seed)
        if out_dir is not None:
            cfg = dataclasses.replace(cfg, out_dir=out_dir)
        return cfg


def _reject_unknown(raw: dict, known: set, where: str) -> None:
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in {where}")


def _get(raw: dict, key: str, kinds, where: str, default):
    if key not in raw:
        return default
    value = raw[key]
    if isinstance(value, bool) and bool not in (kinds if isinstance(kinds, tuple) else (kinds,)):
        raise ConfigError(f"{where}.{key} must not be a boolean, got {value!r}")
    if not isinstance(value, kinds):
        want = kinds[0].__name__ if isinstance(kinds, tuple) else kinds.__name__
        raise ConfigError(f"{where}.{key} must be a {want}, got {value!r}")
    return value


def from_dict(raw: dict) -> ExperimentConfig:
    """Build and validate a config from nested dicts (parsed TOML or JSON)."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a table, got {type(raw).__name__}")
    _reject_unknown(raw, {"seed", "out_dir", "data", "split", "features", "model", "federation"},
                    "config root")
    seed = _get(raw, "seed", int, "config", 0)
    out_dir = _get(raw, "out_dir", str, "config", None)

    d = raw.get("data", {})
    _reject_unknown(d, {"path", "synthetic", "synthetic_days", "synthetic_zones", "columns"},
                    "[data]")
    data = DataConfig(
        path=_get(d, "path", str, "data", None),
        synthetic=_get(d, "synthetic", bool, "data", "path" not in d),
        synthetic_days=_get(d, "synthetic_days", int, "data", 60),
        synthetic_zones=_get(d, "synthetic_zones", int, "data", 3),
        columns=_get(d, "columns", dict, "data", None),
    )

    s = raw.get("split", {})
    _reject_unknown(s, {"train_fraction", "validation_fraction_of_train"}, "[split]")
    try:
        split_spec = SplitSpec(
            train_fraction=float(_get(s, "train_fraction", (int, float), "split", 0.8)),
            validation_fraction_of_train=float(
                _get(s, "validation_fraction_of_train", (int, float), "split", 0.2)),
        )
    except DataError as exc:
        raise ConfigError(f"[split]: {exc}") from exc

    f = raw.get("features", {})
    _reject_unknown(f, {"subset", "k"}, "[features]")
    subset = f.get("subset", "all")
    if isinstance(subset, list):
        subset = tuple(str(x) for x in subset)
    elif not isinstance(subset, str):
        raise ConfigError(f"features.subset must be a string or list, got {subset!r}")
    features = FeatureConfig(subset=subset, k=_get(f, "k", int, "features", 4))

    m = raw.get("model", {})
    _reject_unknown(m, {"kind", "gbdt", "mlp"}, "[model]")
    model_kind = _get(m, "kind", str, "model", "gbdt")

    g = m.get("gbdt", {})
    _reject_unknown(g, {"num_leaves", "max_depth", "learning_rate", "batch_size",
                        "min_data_in_leaf", "max_bins", "lambda_l2", "base_score",
                        "n_batches"}, "[model.gbdt]")
    gbdt = CentralGbdtConfig(
        params=GbdtParams(
            num_leaves=_get(g, "num_leaves", int, "model.gbdt", 30),
            max_depth=_get(g, "max_depth", int, "model.gbdt", 12),
            learning_rate=float(_get(g, "learning_rate", (int, float), "model.gbdt", 0.078)),
            batch_size=_get(g, "batch_size", int, "model.gbdt", 10),
            min_data_in_leaf=_get(g, "min_data_in_leaf", int, "model.gbdt", 20),
            max_bins=_get(g, "max_bins", int, "model.gbdt", 255),
            lambda_l2=float(_get(g, "lambda_l2", (int, float), "model.gbdt", 0.0)),
            base_score=(float(g["base_score"]) if "base_score" in g else None),
        ),
        n_batches=_get(g, "n_batches", int, "model.gbdt", 80),
    )

    p = m.get("mlp", {})
    _reject_unknown(p, {"hidden", "optimizer", "learning_rate", "epochs", "batch_size"},
                    "[model.mlp]")
    hidden = p.get("hidden", [64])
    if not isinstance(hidden, list) or not all(isinstance(h, int) for h in hidden):
        raise ConfigError(f"model.mlp.hidden must be a list of integers, got {hidden!r}")
    mlp_cfg = MlpTrainConfig(
        hidden=tuple(hidden),
        opt=SgdConfig(
            kind=_get(p, "optimizer", str, "model.mlp", "adam"),
            learning_rate=float(_get(p, "learning_rate", (int, float), "model.mlp", 0.01)),
        ),
        epochs=_get(p, "epochs", int, "model.mlp", 300),
        batch_size=_get(p, "batch_size", int, "model.mlp", 30),
    )

    fed = raw.get("federation", {})
    _reject_unknown(fed, {"algorithm", "max_rounds", "client_fraction", "epochs_per_round",
                          "measure_time", "stopper"}, "[federation]")
    st = fed.get("stopper", None)
    stopper = None
    if st is not None:
        _reject_unknown(st, {"delta", "window"}, "[federation.stopper]")
        stopper = StopperConfig(
            delta=float(_get(st, "delta", (int, float), "federation.stopper", 1e-5)),
            window=_get(st, "window", int, "federation.stopper", 10),
        )
    federation = FederationSection(
        algorithm=_get(fed, "algorithm", str, "federation", "fedtrees"),
        max_rounds=_get(fed, "max_rounds", int, "federation", 2000),
        client_fraction=float(_get(fed, "client_fraction", (int, float), "federation", 1.0)),
        epochs_per_round=_get(fed, "epochs_per_round", int, "federation", 5),
        measure_time=_get(fed, "measure_time", bool, "federation", True),
        stopper=stopper,
    )

    return ExperimentConfig(seed=seed, out_dir=out_dir, model_kind=model_kind,
                            data=data, split=split_spec, features=features,
                            gbdt=gbdt, mlp=mlp_cfg, federation=federation).validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return from_dict(raw)
