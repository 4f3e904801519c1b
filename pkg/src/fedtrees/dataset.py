"""Ingestion and feature engineering for 10-minute substation load data.

Pipeline: raw 10-minute CSV rows -> hourly aggregates (arithmetic means,
summed zone power, previous-hour lag) -> supervised feature matrices ->
min-max scaling -> chronological train/validation/test splits.

The nine canonical features follow the usual calendar / weather / lag
grouping; ``PrevHourAgg`` is the previous hour's aggregate consumption for
city-level targets and the previous hour's zone consumption for per-zone
targets.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from fedtrees.errors import DataError

#: Canonical feature order: calendar, weather, power lag.
CANONICAL_FEATURES = (
    "Month",
    "Day",
    "Hour",
    "Temperature",
    "Humidity",
    "Wind speed",
    "Diffuse flow",
    "General diffuse flow",
    "PrevHourAgg",
)

#: Header names of the public Tetouan city file (zone 2/3 carry double spaces).
DEFAULT_COLUMN_MAP = {
    "timestamp": "DateTime",
    "temperature": "Temperature",
    "humidity": "Humidity",
    "wind_speed": "Wind Speed",
    "general_diffuse_flows": "general diffuse flows",
    "diffuse_flows": "diffuse flows",
    "zone_power": [
        "Zone 1 Power Consumption",
        "Zone 2  Power Consumption",
        "Zone 3  Power Consumption",
    ],
}

_SCALAR_FIELDS = ("temperature", "humidity", "wind_speed", "general_diffuse_flows", "diffuse_flows")


@dataclass(frozen=True)
class RawRecord:
    """One 10-minute reading: weather covariates plus per-zone power draw."""

    timestamp: datetime
    temperature: float
    humidity: float
    wind_speed: float
    general_diffuse_flows: float
    diffuse_flows: float
    zone_power: tuple[float, ...]


@dataclass(frozen=True)
class HourlyRecord:
    """One calendar hour: averaged covariates, summed power, and lag values.

    ``prev_hour_agg`` / ``prev_zone_power`` come from the immediately
    preceding hour; the first hour of a file has no lag and is dropped by
    :func:`resample_hourly`. ``source_rows`` counts the 10-minute rows that
    contributed to the hour.
    """

    timestamp: datetime
    temperature: float
    humidity: float
    wind_speed: float
    general_diffuse_flows: float
    diffuse_flows: float
    zone_power: tuple[float, ...]
    aggregate_power: float
    prev_hour_agg: float
    prev_zone_power: tuple[float, ...]
    month: int
    day: int
    hour: int
    source_rows: int


@dataclass
class SupervisedSet:
    """Feature matrix + target vector, the unit of training and evaluation."""

    features: np.ndarray
    target: np.ndarray
    feature_names: tuple[str, ...]
    timestamps: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.feature_names = tuple(self.feature_names)
        self.timestamps = np.asarray(self.timestamps)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        if self.target.shape != (n,) or self.timestamps.shape != (n,):
            raise DataError(
                f"row count mismatch: {n} feature rows, {self.target.shape[0]} targets, "
                f"{self.timestamps.shape[0]} timestamps"
            )
        if self.features.shape[1] != len(self.feature_names):
            raise DataError(
                f"{self.features.shape[1]} feature columns but {len(self.feature_names)} names"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError(f"duplicate feature names: {self.feature_names}")
        if n and not (np.isfinite(self.features).all() and np.isfinite(self.target).all()):
            raise DataError("features and target must be finite")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def slice(self, start: int, stop: int) -> "SupervisedSet":
        return SupervisedSet(
            features=self.features[start:stop].copy(),
            target=self.target[start:stop].copy(),
            feature_names=self.feature_names,
            timestamps=self.timestamps[start:stop].copy(),
        )


@dataclass(frozen=True)
class ScalerParams:
    """Per-column min/max fitted on one split, target column included."""

    feature_names: tuple[str, ...]
    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/validation/test layout.

    ``train_fraction`` is the share of rows in the train+validation block;
    the validation slice is carved from the tail of that block.
    """

    train_fraction: float = 0.8
    validation_fraction_of_train: float = 0.2
    chronological: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DataError(f"train_fraction must be in (0,1), got {self.train_fraction}")
        if not 0.0 <= self.validation_fraction_of_train < 1.0:
            raise DataError(
                f"validation_fraction_of_train must be in [0,1), got {self.validation_fraction_of_train}"
            )
        if not self.chronological:
            raise DataError("only chronological splits are supported")


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        pass
    try:
        return datetime.strptime(text, "%m/%d/%Y %H:%M")
    except ValueError:
        raise DataError(f"unparseable timestamp {text!r}") from None


def load_csv(path, column_map: dict | None = None) -> list[RawRecord]:
    """Read a 10-minute CSV into :class:`RawRecord` rows, in file order.

    ``column_map`` overrides entries of :data:`DEFAULT_COLUMN_MAP`; the
    ``zone_power`` entry lists the per-zone power columns. Errors name the
    offending column and 1-based data row.
    """
    colmap = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        unknown = set(column_map) - set(colmap)
        if unknown:
            raise DataError(f"unknown column_map keys: {sorted(unknown)}")
        colmap.update(column_map)
    zone_cols = list(colmap["zone_power"])
    if not zone_cols:
        raise DataError("column_map must name at least one zone_power column")

    path = Path(path)
    if not path.exists():
        raise DataError(f"input file does not exist: {path}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataError(f"empty file: {path}")
        header = [h.strip() if h else h for h in reader.fieldnames]
        wanted = [colmap[k] for k in ("timestamp", *_SCALAR_FIELDS)] + zone_cols
        missing = [c for c in wanted if c not in header]
        if missing:
            raise DataError(f"missing column {missing[0]!r} in {path} (header: {header})")
        index = {name: header.index(name) for name in wanted}

        records: list[RawRecord] = []
        prev_ts: datetime | None = None
        for row_no, row in enumerate(reader, start=1):
            values = list(row.values())
            # DictReader folds extras; re-read positionally to honor stripped header
            raw = [values[i] if i < len(values) else "" for i in range(len(header))]

            def cell(name: str) -> str:
                v = raw[index[name]]
                if v is None or str(v).strip() == "":
                    raise DataError(f"row {row_no}: empty value in column {name!r}")
                return str(v)

            try:
                ts = _parse_timestamp(cell(colmap["timestamp"]))
            except DataError as exc:
                raise DataError(f"row {row_no}, column {colmap['timestamp']!r}: {exc}") from None
            scalars = {}
            for key in _SCALAR_FIELDS:
                col = colmap[key]
                try:
                    scalars[key] = float(cell(col))
                except ValueError:
                    raise DataError(f"row {row_no}, column {col!r}: unparseable number {raw[index[col]]!r}") from None
            zones = []
            for col in zone_cols:
                try:
                    z = float(cell(col))
                except ValueError:
                    raise DataError(f"row {row_no}, column {col!r}: unparseable number {raw[index[col]]!r}") from None
                if not np.isfinite(z) or z < 0:
                    raise DataError(f"row {row_no}, column {col!r}: power must be finite and >= 0, got {z}")
                zones.append(z)
            if prev_ts is not None and ts <= prev_ts:
                raise DataError(f"row {row_no}: timestamp {ts} does not increase past {prev_ts}")
            prev_ts = ts
            records.append(RawRecord(timestamp=ts, zone_power=tuple(zones), **scalars))
    if not records:
        raise DataError(f"no data rows in {path}")
    return records


def resample_hourly(records: list[RawRecord]) -> list[HourlyRecord]:
    """Collapse 10-minute records to hourly means and attach lag features.

    Weather fields and per-zone power are arithmetic means over the hour's
    rows; aggregate power is the sum of the zone means. Hours must be
    consecutive (a fully empty hour aborts) and the first hour is dropped
    because it has no previous-hour lag.
    """
    if not records:
        raise DataError("cannot resample an empty record list")
    n_zones = len(records[0].zone_power)

    groups: list[tuple[datetime, list[RawRecord]]] = []
    for rec in records:
        if len(rec.zone_power) != n_zones:
            raise DataError(f"inconsistent zone count at {rec.timestamp}")
        hour_start = rec.timestamp.replace(minute=0, second=0, microsecond=0)
        if groups and groups[-1][0] == hour_start:
            groups[-1][1].append(rec)
        else:
            if groups and groups[-1][0] > hour_start:
                raise DataError("records are not sorted by timestamp")
            groups.append((hour_start, [rec]))

    for (a, _), (b, _) in zip(groups, groups[1:]):
        gap_hours = (b - a).total_seconds() / 3600.0
        if gap_hours != 1.0:
            raise DataError(f"empty hour(s) between {a} and {b}: cannot form the lag feature")

    hourly: list[HourlyRecord] = []
    prev_agg: float | None = None
    prev_zones: tuple[float, ...] | None = None
    for hour_start, rows in groups:
        zone_means = tuple(float(np.mean([r.zone_power[z] for r in rows])) for z in range(n_zones))
        agg = float(sum(zone_means))
        if prev_agg is not None:
            hourly.append(
                HourlyRecord(
                    timestamp=hour_start,
                    temperature=float(np.mean([r.temperature for r in rows])),
                    humidity=float(np.mean([r.humidity for r in rows])),
                    wind_speed=float(np.mean([r.wind_speed for r in rows])),
                    general_diffuse_flows=float(np.mean([r.general_diffuse_flows for r in rows])),
                    diffuse_flows=float(np.mean([r.diffuse_flows for r in rows])),
                    zone_power=zone_means,
                    aggregate_power=agg,
                    prev_hour_agg=prev_agg,
                    prev_zone_power=prev_zones,
                    month=hour_start.month,
                    day=hour_start.day,
                    hour=hour_start.hour,
                    source_rows=len(rows),
                )
            )
        prev_agg = agg
        prev_zones = zone_means
    return hourly


def build_supervised(
    hourly: list[HourlyRecord],
    feature_subset=None,
    target_spec="aggregate",
) -> SupervisedSet:
    """Assemble the regression problem: hour i's features predict hour i's load.

    ``feature_subset`` is an ordered subset of :data:`CANONICAL_FEATURES`
    (default: all nine, in canonical order). ``target_spec`` is
    ``"aggregate"`` for city-level load or a zone index; per-zone targets
    swap the lag feature for that zone's previous-hour value.
    """
    if not hourly:
        raise DataError("cannot build a supervised set from no hourly records")
    names = tuple(feature_subset) if feature_subset is not None else CANONICAL_FEATURES
    unknown = [n for n in names if n not in CANONICAL_FEATURES]
    if unknown:
        raise DataError(f"unknown feature name {unknown[0]!r}; canonical features are {CANONICAL_FEATURES}")

    if target_spec == "aggregate":
        get_target = lambda r: r.aggregate_power
        get_lag = lambda r: r.prev_hour_agg
    else:
        zone = int(target_spec)
        n_zones = len(hourly[0].zone_power)
        if not 0 <= zone < n_zones:
            raise DataError(f"zone index {zone} out of range for {n_zones} zones")
        get_target = lambda r: r.zone_power[zone]
        get_lag = lambda r: r.prev_zone_power[zone]

    extractors = {
        "Month": lambda r: r.month,
        "Day": lambda r: r.day,
        "Hour": lambda r: r.hour,
        "Temperature": lambda r: r.temperature,
        "Humidity": lambda r: r.humidity,
        "Wind speed": lambda r: r.wind_speed,
        "Diffuse flow": lambda r: r.diffuse_flows,
        "General diffuse flow": lambda r: r.general_diffuse_flows,
        "PrevHourAgg": get_lag,
    }
    features = np.array([[extractors[name](r) for name in names] for r in hourly], dtype=np.float64)
    features = features.reshape(len(hourly), len(names))
    target = np.array([get_target(r) for r in hourly], dtype=np.float64)
    timestamps = np.array([np.datetime64(r.timestamp) for r in hourly])
    return SupervisedSet(features=features, target=target, feature_names=names, timestamps=timestamps)


def fit_scaler(sup: SupervisedSet) -> ScalerParams:
    """Record per-column min/max (target included) on the given split."""
    if sup.n_rows == 0:
        raise DataError("cannot fit a scaler on an empty set")
    return ScalerParams(
        feature_names=sup.feature_names,
        feature_min=sup.features.min(axis=0),
        feature_max=sup.features.max(axis=0),
        target_min=float(sup.target.min()),
        target_max=float(sup.target.max()),
    )


def _scale_columns(values: np.ndarray, lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (values - lo) / safe
    return np.where(span > 0, out, 0.0)


def apply_scaler(sup: SupervisedSet, params: ScalerParams) -> SupervisedSet:
    """Map every column (and the target) through ``(x - min) / (max - min)``.

    Columns that were constant on the fitting split map to 0. Out-of-range
    values scale past [0,1] without clipping.
    """
    if sup.feature_names != params.feature_names:
        raise DataError(
            f"scaler fitted on columns {params.feature_names} cannot apply to {sup.feature_names}"
        )
    return SupervisedSet(
        features=_scale_columns(sup.features, params.feature_min, params.feature_max),
        target=_scale_columns(sup.target, params.target_min, params.target_max),
        feature_names=sup.feature_names,
        timestamps=sup.timestamps.copy(),
    )


def inverse_target(values, params: ScalerParams) -> np.ndarray:
    """Undo target scaling, mapping [0,1]-scale values back to raw units."""
    arr = np.asarray(values, dtype=np.float64)
    span = params.target_max - params.target_min
    if span <= 0:
        return np.full_like(arr, params.target_min)
    return arr * span + params.target_min


def scale_target(values, params: ScalerParams) -> np.ndarray:
    """Forward-map raw target values onto the fitted [0,1] scale."""
    arr = np.asarray(values, dtype=np.float64)
    return _scale_columns(arr, params.target_min, params.target_max)


def split(sup: SupervisedSet, spec: SplitSpec) -> tuple[SupervisedSet, SupervisedSet, SupervisedSet]:
    """Cut chronological (train, validation, test) slices.

    The train+validation block takes ``train_fraction`` of the rows;
    validation comes off the tail of that block.
    """
    n = sup.n_rows
    n_train_block = int(n * spec.train_fraction + 1e-9)
    n_val = int(n_train_block * spec.validation_fraction_of_train + 1e-9)
    n_train = n_train_block - n_val
    if n_train < 1 or n - n_train_block < 1:
        raise DataError(
            f"degenerate split: {n} rows with train_fraction {spec.train_fraction} leaves "
            f"train={n_train}, test={n - n_train_block}"
        )
    return (
        sup.slice(0, n_train),
        sup.slice(n_train, n_train_block),
        sup.slice(n_train_block, n),
    )


def concat_supervised(parts) -> SupervisedSet:
    """Stack supervised sets row-wise; all parts must share feature names."""
    parts = list(parts)
    if not parts:
        raise DataError("cannot concatenate zero supervised sets")
    names = parts[0].feature_names
    for p in parts[1:]:
        if p.feature_names != names:
            raise DataError(
                f"cannot pool sets with differing columns: {p.feature_names} vs {names}"
            )
    return SupervisedSet(
        features=np.concatenate([p.features for p in parts], axis=0),
        target=np.concatenate([p.target for p in parts]),
        feature_names=names,
        timestamps=np.concatenate([p.timestamps for p in parts]),
    )


def supervised_csv_text(sup: SupervisedSet) -> str:
    """Render a supervised set as CSV text: timestamp, feature columns, target."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["timestamp", *sup.feature_names, "target"])
    for i in range(sup.n_rows):
        ts = np.datetime_as_string(np.datetime64(sup.timestamps[i], "s"))
        writer.writerow(
            [ts, *(repr(float(v)) for v in sup.features[i]), repr(float(sup.target[i]))]
        )
    return out.getvalue()


def write_supervised(sup: SupervisedSet, path) -> None:
    """Cache a supervised set as CSV: timestamp, feature columns, target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(supervised_csv_text(sup), encoding="utf-8")


def read_supervised(path) -> SupervisedSet:
    """Load a supervised set cached by :func:`write_supervised`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"prepared-set file does not exist: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "timestamp" or header[-1] != "target":
            raise DataError(f"not a prepared-set file (header {header!r}): {path}")
        names = tuple(header[1:-1])
        rows, targets, stamps = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(f"row {row_no}: expected {len(header)} cells, got {len(row)}")
            try:
                stamps.append(np.datetime64(row[0]))
                rows.append([float(v) for v in row[1:-1]])
                targets.append(float(row[-1]))
            except ValueError as exc:
                raise DataError(f"row {row_no}: {exc}") from None
    if not rows:
        raise DataError(f"no data rows in {path}")
    return SupervisedSet(
        features=np.array(rows, dtype=np.float64),
        target=np.array(targets, dtype=np.float64),
        feature_names=names,
        timestamps=np.array(stamps),
    )
