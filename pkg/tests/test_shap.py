"""Per-prediction attribution checked against exhaustive Shapley values."""

from __future__ import annotations

import numpy as np
import pytest

from groupcast.gbdt import TrainConfig, expected_value, explain, fit
from oracles import shapley_bf

ABS = 1e-6


def random_model(rng):
    m = int(rng.integers(1, 7))
    n = int(rng.integers(30, 80))
    X = rng.normal(size=(n, m))
    X[rng.random(size=X.shape) < 0.3] = 0.0  # exercise the zero/default path
    y = rng.normal(size=n) + X[:, 0] * 2.0
    cfg = TrainConfig(
        num_trees=int(rng.integers(1, 5)), learning_rate=0.5,
        max_leaves=int(rng.integers(2, 9)), min_data_in_leaf=2,
        max_bins=32, early_stopping_rounds=0, l2_reg=float(rng.random()),
    )
    objective = "mse" if int(rng.integers(0, 2)) == 0 else "mae"
    return fit(X, y, objective=objective, config=cfg), m


def test_matches_brute_force_on_random_models():
    rng = np.random.default_rng(42)
    for _ in range(12):
        model, m = random_model(rng)
        Xq = rng.normal(size=(3, m))
        Xq[rng.random(size=Xq.shape) < 0.4] = 0.0
        result = explain(model, Xq)
        for r in range(3):
            phi_bf, base_bf = shapley_bf(model, Xq[r])
            assert result.phi[r] == pytest.approx(phi_bf, abs=ABS)
            assert result.base_value == pytest.approx(base_bf, abs=ABS)


def test_additivity_on_training_rows():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(300, 6))
    X[rng.random(size=X.shape) < 0.25] = 0.0
    y = X[:, 0] * 3 - X[:, 2] + rng.normal(size=300) * 0.2
    model = fit(X, y, config=TrainConfig(num_trees=25, min_data_in_leaf=5,
                                         early_stopping_rounds=0))
    result = explain(model, X)
    recomposed = result.base_value + result.phi.sum(axis=1)
    gap = np.abs(recomposed - result.predictions)
    assert gap.max() <= ABS * np.maximum(1.0, np.abs(result.predictions)).max()
    assert result.predictions == pytest.approx(model.predict(X), rel=1e-12)


def test_base_value_is_expected_prediction():
    rng = np.random.default_rng(2)
    model, m = random_model(rng)
    Xq = rng.normal(size=(2, m))
    result = explain(model, Xq)
    assert result.base_value == pytest.approx(expected_value(model), rel=1e-12)
    _, base_bf = shapley_bf(model, Xq[0])
    assert result.base_value == pytest.approx(base_bf, abs=ABS)


def test_constant_model_attributes_nothing():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 3))
    model = fit(X, np.full(50, 4.25), config=TrainConfig(num_trees=5,
                                                         early_stopping_rounds=0))
    result = explain(model, X[:4])
    assert result.phi == pytest.approx(np.zeros((4, 3)), abs=1e-12)
    assert result.predictions == pytest.approx(np.full(4, 4.25))


def test_feature_names_travel_with_explanations():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(80, 2))
    y = X[:, 0]
    model = fit(X, y, feature_names=["alpha", "beta"],
                config=TrainConfig(num_trees=3, min_data_in_leaf=5,
                                   early_stopping_rounds=0))
    result = explain(model, X[:1])
    assert result.feature_names == ["alpha", "beta"]
    assert result.phi.shape == (1, 2)
