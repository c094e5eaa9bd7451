import numpy as np
import pytest

from dataset import Dataset, TreatmentColumn
from learners import LearnerKind, LearnerSet


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ols_learners():
    return LearnerSet.single(LearnerKind("ols"))


@pytest.fixture
def mean_learners():
    return LearnerSet.single(LearnerKind("mean"))


@pytest.fixture
def linear_dataset(rng):
    """Binary A1, continuous A2, outcome linear in X with an A1*A2 interaction"""
    n, p = 500, 10
    X = rng.standard_normal((n, p))
    beta = np.linspace(-1.0, 1.0, p)
    A1 = (rng.random(n) < 1.0 / (1.0 + np.exp(-(0.5 * X[:, 0] - 0.3 * X[:, 1])))).astype(float)
    A2 = X @ (beta / 2.0) + rng.standard_normal(n)
    Y = 2.0 * A1 - A2 + 0.5 * A1 * A2 + X @ beta + rng.standard_normal(n)
    return Dataset(X, Y, (TreatmentColumn("A1", "binary", A1), TreatmentColumn("A2", "continuous", A2)))


@pytest.fixture
def categorical_dataset(rng):
    """Three-level ART (NNRTI reference) and binary TDF"""
    n = 600
    X = rng.standard_normal((n, 4))
    art = rng.integers(0, 3, size=n)
    tdf = (rng.random(n) < 0.5).astype(float)
    Y = X[:, 0] - 2.0 * (art == 1) - 4.0 * (art == 2) + tdf + rng.standard_normal(n)
    return Dataset(X, Y, (TreatmentColumn("ART", "categorical", art, ("NNRTI", "bPI", "DTG"), 0),
                          TreatmentColumn("TDF", "binary", tdf)))
