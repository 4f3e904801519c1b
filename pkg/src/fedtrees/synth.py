"""Seeded generator of synthetic 10-minute substation load data.

Produces files with the same column layout as the public city dataset so
the whole pipeline, including ingestion, can run end to end without any
download. The load signal is a daily/quarter-hour-free sinusoid mix plus
weather-coupled terms and noise, so boosted trees and networks both have
real structure to fit and the zones differ by scale and phase.
"""

from __future__ import annotations

import csv
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from fedtrees.dataset import DEFAULT_COLUMN_MAP, RawRecord, load_csv

STEP_MINUTES = 10


def synthetic_rows(n_days: int = 30, seed: int = 0, n_zones: int = 3,
                   start: datetime = datetime(2017, 1, 1)) -> list[dict]:
    """Rows of the raw schema as dicts keyed by the canonical column names.

    Zones share weather but have distinct base loads, daily phases, and
    weather sensitivities; zone loads are kept strictly positive so
    percentage metrics stay well defined.
    """
    rng = np.random.default_rng(seed)
    steps = n_days * 24 * 60 // STEP_MINUTES
    zone_base = 20000.0 + 8000.0 * rng.uniform(size=n_zones)
    # Same-city substations peak together; zones get only a small phase
    # jitter (about an hour) so one shared model remains learnable.
    zone_phase = rng.uniform(0.0, 2.0 * np.pi) + rng.uniform(-0.3, 0.3, size=n_zones)
    zone_temp_coef = 200.0 + 150.0 * rng.uniform(size=n_zones)
    rows = []
    ts = start
    for _ in range(steps):
        day_frac = (ts.hour + ts.minute / 60.0) / 24.0
        year_frac = ts.timetuple().tm_yday / 365.0
        temperature = (18.0 + 8.0 * np.sin(2.0 * np.pi * (year_frac - 0.25))
                       + 5.0 * np.sin(2.0 * np.pi * (day_frac - 0.3))
                       + rng.normal(0.0, 0.8))
        humidity = float(np.clip(65.0 - 1.5 * temperature + rng.normal(0.0, 5.0), 5.0, 100.0))
        wind = float(max(0.0, 2.5 + 1.5 * np.sin(2.0 * np.pi * day_frac) + rng.normal(0.0, 0.8)))
        sun = max(0.0, np.sin(2.0 * np.pi * (day_frac - 0.25)))
        general_diffuse = float(max(0.0, 180.0 * sun + rng.normal(0.0, 10.0)))
        diffuse = float(max(0.0, 75.0 * sun + rng.normal(0.0, 8.0)))
        zone_vals = []
        for z in range(n_zones):
            load = (zone_base[z]
                    + 6000.0 * np.sin(2.0 * np.pi * day_frac + zone_phase[z])
                    + 2500.0 * np.sin(4.0 * np.pi * day_frac + 0.5 * zone_phase[z])
                    + zone_temp_coef[z] * (temperature - 18.0)
                    + 3.0 * general_diffuse
                    + rng.normal(0.0, 400.0))
            zone_vals.append(max(500.0, load))
        row = {
            DEFAULT_COLUMN_MAP["timestamp"]: ts.strftime("%m/%d/%Y %H:%M"),
            DEFAULT_COLUMN_MAP["temperature"]: round(float(temperature), 3),
            DEFAULT_COLUMN_MAP["humidity"]: round(humidity, 3),
            DEFAULT_COLUMN_MAP["wind_speed"]: round(wind, 3),
            DEFAULT_COLUMN_MAP["general_diffuse_flows"]: round(general_diffuse, 3),
            DEFAULT_COLUMN_MAP["diffuse_flows"]: round(diffuse, 3),
        }
        for z in range(n_zones):
            row[DEFAULT_COLUMN_MAP["zone_power"][z]] = round(zone_vals[z], 3)
        rows.append(row)
        ts = ts + timedelta(minutes=STEP_MINUTES)
    return rows


def write_synthetic_csv(path, n_days: int = 30, seed: int = 0, n_zones: int = 3,
                        start: datetime = datetime(2017, 1, 1)) -> Path:
    """Write a synthetic raw CSV and return its path."""
    if n_zones > len(DEFAULT_COLUMN_MAP["zone_power"]):
        raise ValueError(f"at most {len(DEFAULT_COLUMN_MAP['zone_power'])} zones supported")
    rows = synthetic_rows(n_days=n_days, seed=seed, n_zones=n_zones, start=start)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = [DEFAULT_COLUMN_MAP["timestamp"]]
    header += [DEFAULT_COLUMN_MAP[k] for k in
               ("temperature", "humidity", "wind_speed", "general_diffuse_flows", "diffuse_flows")]
    header += [DEFAULT_COLUMN_MAP["zone_power"][z] for z in range(n_zones)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=header)
        writer.writeheader()
        writer.writerows(rows)
    return path


def synthetic_records(n_days: int = 30, seed: int = 0, n_zones: int = 3,
                      start: datetime = datetime(2017, 1, 1)) -> list[RawRecord]:
    """Generate and ingest synthetic data in one step (no file left behind)."""
    import io
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = write_synthetic_csv(Path(tmp) / "synthetic.csv", n_days=n_days,
                                   seed=seed, n_zones=n_zones, start=start)
        colmap = dict(DEFAULT_COLUMN_MAP)
        colmap["zone_power"] = DEFAULT_COLUMN_MAP["zone_power"][:n_zones]
        return load_csv(path, column_map=colmap)
