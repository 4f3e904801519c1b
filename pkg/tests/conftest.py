"""Shared fixtures plus the acceptance-criteria summary printed after runs."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from fedtrees.config import ExperimentConfig
from fedtrees.dataset import SupervisedSet

_criteria_results: dict[int, tuple[str, str, str]] = {}


def record_criterion(num: int, name: str, outcome: str, detail: str = "") -> None:
    """Register one acceptance criterion's outcome for the terminal summary."""
    _criteria_results[num] = (name, outcome, detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria_results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria_results):
        name, outcome, detail = _criteria_results[num]
        line = f"criterion {num:2d} {name}: {outcome}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


def make_regression(n: int, f: int, seed: int, noise: float = 0.05) -> SupervisedSet:
    """Random nonlinear regression problem with generic feature names."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, f))
    coef = rng.standard_normal(f)
    y = X @ coef + 0.5 * np.sin(2.0 * np.pi * X[:, 0]) + noise * rng.standard_normal(n)
    stamps = np.datetime64("2017-01-01") + np.arange(n).astype("timedelta64[h]")
    return SupervisedSet(
        features=X,
        target=y,
        feature_names=tuple(f"f{j}" for j in range(f)),
        timestamps=stamps,
    )


@pytest.fixture
def regression():
    return make_regression


def small_synthetic_config(**federation_overrides) -> ExperimentConfig:
    """A config small enough for sub-second end-to-end runs."""
    base = ExperimentConfig()
    federation = replace(
        base.federation, max_rounds=8, measure_time=False, **federation_overrides
    )
    return replace(
        base,
        seed=3,
        data=replace(base.data, synthetic_days=20, synthetic_zones=3),
        gbdt=replace(
            base.gbdt, n_batches=6, params=replace(base.gbdt.params, batch_size=5)
        ),
        mlp=replace(base.mlp, epochs=25),
        federation=federation,
    )


@pytest.fixture(scope="session")
def small_config() -> ExperimentConfig:
    return small_synthetic_config()
