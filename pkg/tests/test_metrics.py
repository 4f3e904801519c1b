import numpy as np
import pytest

from fedtrees.errors import DataError
from fedtrees.metrics import (
    evaluate,
    mae,
    mape,
    persistence_eval,
    persistence_predictions,
)


def test_mae_hand_value():
    assert mae([1.0, 2.0, 3.0], [2.0, 2.0, 5.0]) == pytest.approx(1.0)


def test_mae_zero_for_perfect_fit():
    y = np.linspace(-3.0, 5.0, 17)
    assert mae(y, y) == 0.0


def test_mae_shape_and_empty_errors():
    with pytest.raises(DataError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(DataError):
        mae([], [])
    with pytest.raises(DataError):
        mae(np.ones((2, 2)), np.ones((2, 2)))


def test_mape_hand_value():
    # (10/100 + 20/200) / 2 * 100 = 10%
    assert mape([100.0, 200.0], [110.0, 180.0]) == pytest.approx(10.0)


def test_mape_rejects_near_zero_actuals():
    with pytest.raises(DataError, match="index 1"):
        mape([5.0, 0.0, 3.0], [5.0, 1.0, 3.0])
    with pytest.raises(DataError):
        mape([1e-9], [1.0])


def test_mape_sign_insensitive_on_errors():
    over = mape([100.0], [120.0])
    under = mape([100.0], [80.0])
    assert over == pytest.approx(under) == pytest.approx(20.0)


def test_evaluate_keeps_scales_apart():
    result = evaluate([0.2, 0.4], [0.3, 0.4], [200.0, 400.0], [300.0, 400.0])
    assert result.mae == pytest.approx(0.05)
    assert result.mape == pytest.approx(25.0)
    assert result.n == 2


def test_persistence_predictions_lag_structure():
    y, y_hat = persistence_predictions([3.0, 5.0, 7.0])
    assert y.tolist() == [5.0, 7.0]
    assert y_hat.tolist() == [3.0, 5.0]


def test_persistence_needs_seed_plus_one():
    with pytest.raises(DataError):
        persistence_predictions([1.0])


def test_persistence_eval_hand_value():
    result = persistence_eval([3.0, 5.0, 7.0])
    assert result.mae == pytest.approx(2.0)
    assert result.mape == pytest.approx((2.0 / 5.0 + 2.0 / 7.0) / 2.0 * 100.0)
    assert result.n == 2


def test_persistence_eval_separate_raw_series():
    scaled = [0.3, 0.5, 0.7]
    raw = [300.0, 500.0, 700.0]
    result = persistence_eval(scaled, raw)
    assert result.mae == pytest.approx(0.2)
    assert result.mape == pytest.approx((200.0 / 500.0 + 200.0 / 700.0) / 2.0 * 100.0)


def test_persistence_eval_mismatched_raw_length():
    with pytest.raises(DataError):
        persistence_eval([1.0, 2.0, 3.0], [1.0, 2.0])
