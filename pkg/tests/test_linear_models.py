import numpy as np
import pytest

import linear_models


@pytest.fixture
def regression(rng):
    X = rng.standard_normal((300, 5))
    y = 1.5 + X @ np.array([2.0, -1.0, 0.0, 0.0, 0.5]) + 0.1 * rng.standard_normal(300)
    return X, y


def test_ols_recovers_coefficients(regression):
    X, y = regression
    model = linear_models.fit_ols(X, y)
    assert np.allclose(model.coef, [2.0, -1.0, 0.0, 0.0, 0.5], atol=0.05)
    assert model.intercept == pytest.approx(1.5, abs=0.05)


def test_ridge_zero_penalty_matches_ols(regression):
    X, y = regression
    assert np.allclose(linear_models.fit_ridge(X, y, 0.0).coef, linear_models.fit_ols(X, y).coef)


def test_ridge_shrinks(regression):
    X, y = regression
    small = linear_models.fit_ridge(X, y, 0.01)
    large = linear_models.fit_ridge(X, y, 10.0)
    assert np.linalg.norm(large.coef) < np.linalg.norm(small.coef)


def test_lasso_kkt_and_sparsity(regression):
    X, y = regression
    model, diagnostics = linear_models.fit_lasso(X, y, 0.1)
    assert diagnostics["kkt_violation"] < 1e-6
    assert model.coef[2] == 0.0
    assert model.coef[3] == 0.0


def test_lasso_above_lambda_max_is_empty(regression):
    X, y = regression
    lam_max = linear_models.lasso_grid(X, y)[0]
    model, _ = linear_models.fit_lasso(X, y, lam_max * 1.01)
    assert np.all(model.coef == 0.0)
    assert model.intercept == pytest.approx(y.mean())


def test_select_lambda_is_deterministic(regression):
    X, y = regression
    grid = linear_models.ridge_grid(X)
    first = linear_models.select_lambda(X, y, grid, linear_models.fit_ridge, linear_models.squared_loss, 3)
    second = linear_models.select_lambda(X, y, grid, linear_models.fit_ridge, linear_models.squared_loss, 3)
    assert first == second
    assert first in grid


def test_logistic_probabilities(rng):
    X = rng.standard_normal((2000, 2))
    p = 1.0 / (1.0 + np.exp(-(0.5 + X[:, 0])))
    labels = (rng.random(2000) < p).astype(int)
    model, diagnostics = linear_models.fit_softmax(X, labels, 2)
    assert diagnostics["converged"]
    P = model.predict(X)
    assert P.shape == (2000, 2)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.mean(np.abs(P[:, 1] - p)) < 0.05


def test_softmax_rows_sum_to_one(rng):
    X = rng.standard_normal((600, 3))
    labels = rng.integers(0, 3, size=600)
    model, _ = linear_models.fit_softmax(X, labels, 3)
    P = model.predict(X)
    assert P.shape == (600, 3)
    assert np.allclose(P.sum(axis=1), 1.0)
    # intercept-only truth: frequencies recovered
    assert np.allclose(P.mean(axis=0), np.bincount(labels) / 600, atol=0.01)


def test_penalised_softmax_records_lambda(rng):
    X = rng.standard_normal((200, 3))
    labels = (X[:, 0] + rng.standard_normal(200) > 0).astype(int)
    _, diagnostics = linear_models.fit_penalised_softmax(X, labels, 2, "l1", 0.01, 0)
    assert diagnostics["lambda"] == 0.01


def test_mean_model():
    assert linear_models.MeanModel(2.0).predict(np.zeros((3, 1))).tolist() == [2.0, 2.0, 2.0]
    assert linear_models.MeanModel(np.array([0.25, 0.75])).predict(np.zeros((2, 1))).shape == (2, 2)
