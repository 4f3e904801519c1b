import numpy as np
import pytest

from fedtrees.dataset import load_csv, resample_hourly
from fedtrees.synth import synthetic_records, write_synthetic_csv


def test_record_count_and_cadence():
    records = synthetic_records(n_days=3, seed=0)
    assert len(records) == 3 * 144
    stamps = np.array([r.timestamp for r in records])
    deltas = np.diff(stamps).astype("timedelta64[m]")
    assert np.all(deltas == np.timedelta64(10, "m"))


def test_deterministic_per_seed():
    a = synthetic_records(n_days=2, seed=4)
    b = synthetic_records(n_days=2, seed=4)
    assert all(
        x.timestamp == y.timestamp and x.zone_power == y.zone_power for x, y in zip(a, b)
    )
    c = synthetic_records(n_days=2, seed=5)
    assert any(x.zone_power != y.zone_power for x, y in zip(a, c))


def test_zone_count_respected():
    for zones in (1, 2, 3):
        records = synthetic_records(n_days=2, seed=0, n_zones=zones)
        assert all(len(r.zone_power) == zones for r in records)


def test_loads_look_like_a_city():
    records = synthetic_records(n_days=5, seed=1)
    power = np.array([r.zone_power for r in records])
    assert np.all(power > 500.0)
    agg = power.sum(axis=1)
    # the daily cycle should leave a visible gap between peak and trough
    assert agg.max() > agg.min() * 1.2


def test_csv_round_trip(tmp_path):
    path = tmp_path / "synth.csv"
    write_synthetic_csv(path, n_days=2, seed=7)
    records = load_csv(path)
    direct = synthetic_records(n_days=2, seed=7)
    assert len(records) == len(direct)
    for got, want in zip(records, direct):
        assert got.timestamp == want.timestamp
        np.testing.assert_allclose(got.zone_power, want.zone_power, rtol=1e-9)
        assert got.temperature == pytest.approx(want.temperature, rel=1e-9)
        assert got.humidity == pytest.approx(want.humidity, rel=1e-9)
        assert got.general_diffuse_flows == pytest.approx(want.general_diffuse_flows, rel=1e-9)


def test_csv_feeds_hourly_pipeline(tmp_path):
    path = tmp_path / "synth.csv"
    write_synthetic_csv(path, n_days=2, seed=2)
    hourly = resample_hourly(load_csv(path))
    # first hour is consumed by the lag feature
    assert len(hourly) == 2 * 24 - 1
    assert all(h.prev_hour_agg > 0 for h in hourly)
