import numpy as np
import pytest

from crossfit import FoldError, crossfit_predict, make_folds
from learners import LearnerKind
from task_runner import TaskRunner


def test_folds_partition_rows():
    plan = make_folds(103, 5, 0)
    plan.validate()
    sizes = plan.fold_sizes()
    assert sum(sizes) == 103
    assert max(sizes) - min(sizes) <= 1


def test_folds_depend_on_seed_only():
    assert np.array_equal(make_folds(50, 3, 4).assignments, make_folds(50, 3, 4).assignments)
    assert not np.array_equal(make_folds(50, 3, 4).assignments, make_folds(50, 3, 5).assignments)


def test_stratified_folds_balance_each_stratum(rng):
    labels = rng.integers(0, 3, size=200)
    plan = make_folds(200, 4, 0, labels)
    plan.validate()
    for label in range(3):
        counts = np.bincount(plan.assignments[labels == label], minlength=4)
        assert counts.max() - counts.min() <= 1
    assert max(plan.fold_sizes()) - min(plan.fold_sizes()) <= 1


def test_small_stratum_rejected():
    labels = np.array([0] * 20 + [1] * 2)
    with pytest.raises(FoldError):
        make_folds(22, 5, 0, labels)


def test_too_many_folds():
    with pytest.raises(FoldError):
        make_folds(3, 5, 0)


def test_full_sample_plan():
    plan = make_folds(10, 1, 0)
    assert plan.full_sample
    assert plan.train_rows(0).tolist() == list(range(10))


def test_predictions_are_out_of_fold(rng):
    X = rng.standard_normal((40, 1))
    y = np.arange(40.0)
    plan = make_folds(40, 4, 0)
    prediction = crossfit_predict(X, y, LearnerKind("mean"), plan)
    for fold in range(4):
        test = plan.test_rows(fold)
        assert np.allclose(prediction[test], y[plan.train_rows(fold)].mean())


def test_full_sample_prediction_covers_every_row(rng):
    X = rng.standard_normal((30, 2))
    y = X[:, 0]
    prediction = crossfit_predict(X, y, LearnerKind("ols"), make_folds(30, 1, 0))
    assert np.allclose(prediction, y)


def test_train_mask_restricts_training(rng):
    X = rng.standard_normal((60, 1))
    y = np.where(np.arange(60) < 30, 1.0, 5.0)
    prediction = crossfit_predict(X, y, LearnerKind("mean"), make_folds(60, 3, 0), train_mask=y == 5.0)
    assert np.allclose(prediction, 5.0)


def test_missing_class_in_training_fold():
    labels = np.zeros(20, dtype=int)
    labels[0] = 1
    X = np.arange(20.0)[:, None]
    with pytest.raises(FoldError):
        crossfit_predict(X, labels, LearnerKind("logistic"), make_folds(20, 2, 0), "binary_prob")


def test_thread_count_does_not_change_predictions(rng):
    X = rng.standard_normal((90, 3))
    y = X[:, 0] + rng.standard_normal(90)
    kind = LearnerKind.from_config({"kind": "random_forest", "n_trees": 5})
    plan = make_folds(90, 3, 2)
    single = crossfit_predict(X, y, kind, plan)
    threaded = crossfit_predict(X, y, kind, plan, runner=TaskRunner(3))
    assert np.array_equal(single, threaded)


def test_multiclass_prediction_shape(rng):
    X = rng.standard_normal((90, 2))
    labels = np.arange(90) % 3
    prediction = crossfit_predict(X, labels, LearnerKind("multinomial_softmax"), make_folds(90, 3, 0),
                                  "multiclass_prob", 3)
    assert prediction.shape == (90, 3)
    assert np.allclose(prediction.sum(axis=1), 1.0)
