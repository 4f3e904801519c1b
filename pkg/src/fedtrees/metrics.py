"""Forecast evaluation: MAE, MAPE, and the Persistence baseline.

MAE is reported on whatever scale the inputs carry (the pipeline feeds it
[0,1]-scaled targets), while MAPE is only meaningful on the raw scale, so
``EvalResult`` keeps the two apart.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedtrees.errors import DataError

#: Actuals with magnitude at or below this are rejected by :func:`mape`.
MAPE_EPS = 1e-6


@dataclass(frozen=True)
class EvalResult:
    """Evaluation summary for one model on one slice."""

    mae: float
    mape: float
    n: int


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def mae(y, y_hat) -> float:
    """Mean absolute error between actuals ``y`` and predictions ``y_hat``."""
    y = _as_vector(y, "y")
    y_hat = _as_vector(y_hat, "y_hat")
    if y.shape != y_hat.shape:
        raise DataError(f"length mismatch: {y.shape[0]} actuals vs {y_hat.shape[0]} predictions")
    if y.size == 0:
        raise DataError("cannot compute MAE of empty vectors")
    return float(np.mean(np.abs(y - y_hat)))


def mape(y, y_hat, *, eps: float = MAPE_EPS) -> float:
    """Mean absolute percentage error, reported as a percentage.

    Every actual must satisfy ``|y_i| > eps``; a near-zero actual makes the
    ratio blow up, so it is rejected with the offending index named.
    """
    y = _as_vector(y, "y")
    y_hat = _as_vector(y_hat, "y_hat")
    if y.shape != y_hat.shape:
        raise DataError(f"length mismatch: {y.shape[0]} actuals vs {y_hat.shape[0]} predictions")
    if y.size == 0:
        raise DataError("cannot compute MAPE of empty vectors")
    bad = np.flatnonzero(np.abs(y) <= eps)
    if bad.size:
        raise DataError(f"MAPE undefined: actual value {y[bad[0]]!r} at index {int(bad[0])} is within {eps} of zero")
    return float(np.mean(np.abs((y - y_hat) / y))) * 100.0


def evaluate(y_scaled, y_hat_scaled, y_raw, y_hat_raw) -> EvalResult:
    """Bundle MAE on the scaled series with MAPE on the raw series."""
    return EvalResult(
        mae=mae(y_scaled, y_hat_scaled),
        mape=mape(y_raw, y_hat_raw),
        n=int(np.asarray(y_scaled).shape[0]),
    )


def persistence_predictions(series) -> tuple[np.ndarray, np.ndarray]:
    """One-step-lag forecasts for ``series``.

    ``series[0]`` acts as the seed observation (the last actual before the
    evaluation slice); predictions cover ``series[1:]``. Returns
    ``(actuals, predictions)``.
    """
    arr = _as_vector(series, "series")
    if arr.size < 2:
        raise DataError(f"persistence needs at least 2 values (seed + 1 actual), got {arr.size}")
    return arr[1:], arr[:-1]


def persistence_eval(series, raw_series=None) -> EvalResult:
    """Evaluate the Persistence baseline, which repeats the previous actual.

    ``series`` is the scale MAE is reported on; ``raw_series`` (same shape,
    defaults to ``series``) is the scale MAPE is reported on. Both include
    the seed value at index 0.
    """
    y, y_hat = persistence_predictions(series)
    if raw_series is None:
        raw_series = series
    y_raw, y_hat_raw = persistence_predictions(raw_series)
    if y_raw.shape != y.shape:
        raise DataError("raw_series must have the same length as series")
    return EvalResult(mae=mae(y, y_hat), mape=mape(y_raw, y_hat_raw), n=int(y.size))
