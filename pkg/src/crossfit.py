import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

import learners
from learners import LearnerKind
from seeding import derive_seed
from task_runner import SEQUENTIAL, TaskRunner

_logger = logging.getLogger(__name__)


class FoldError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


@dataclass(frozen=True, eq=False)
class FoldPlan:
    """K-way partition of the rows; K=1 means fit and predict on every row"""
    K: int
    assignments: np.ndarray
    seed: int
    stratify_on: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.assignments.shape[0]

    @property
    def full_sample(self) -> bool:
        return self.K == 1

    def fold_seed(self, fold: int) -> int:
        return derive_seed(self.seed, fold)

    def train_rows(self, fold: int) -> np.ndarray:
        if self.full_sample:
            return np.arange(self.n)
        return np.nonzero(self.assignments != fold)[0]

    def test_rows(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments == fold)[0]

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.K).tolist()

    def validate(self) -> None:
        """Every row held out exactly once"""
        if self.assignments.ndim != 1 or self.assignments.min(initial=0) < 0 \
                or self.assignments.max(initial=0) >= self.K:
            raise FoldError("fold assignments must be ids in 0..{}".format(self.K - 1))
        held_out = np.concatenate([self.test_rows(k) for k in range(self.K)])
        if held_out.shape[0] != self.n or np.unique(held_out).shape[0] != self.n:
            raise FoldError("fold plan is not a partition of the rows")


def make_folds(n: int, K: int, seed: int, stratify_on: Optional[np.ndarray] = None) -> FoldPlan:
    """Balanced random partition; with strata, balanced within each stratum"""
    if K < 1:
        raise FoldError("fold count must be at least 1")
    if K > n:
        raise FoldError("{} folds requested for {} rows".format(K, n))
    rng = np.random.default_rng(seed)
    assignments = np.zeros(n, dtype=int)

    if stratify_on is None:
        assignments[rng.permutation(n)] = np.arange(n) % K
    else:
        labels = np.asarray(stratify_on)
        if labels.shape != (n,):
            raise FoldError("stratification labels must have one entry per row")
        offset = 0
        for label in np.unique(labels):
            rows = np.nonzero(labels == label)[0]
            if rows.shape[0] < K:
                raise FoldError("stratum {} has {} rows, fewer than {} folds".format(label, rows.shape[0], K))
            # running offset keeps overall fold sizes within one of each other
            assignments[rng.permutation(rows)] = (offset + np.arange(rows.shape[0])) % K
            offset += rows.shape[0]
        labels = labels.copy()
        labels.setflags(write=False)
        stratify_on = labels

    assignments.setflags(write=False)
    plan = FoldPlan(K, assignments, seed, stratify_on)
    _logger.debug("Fold plan: K={} seed={} sizes={}".format(K, seed, plan.fold_sizes()))
    return plan


def crossfit_predict(X: np.ndarray, target: np.ndarray, kind: LearnerKind, plan: FoldPlan,
                     target_type: str = "regression", n_classes: Optional[int] = None,
                     train_mask: Optional[np.ndarray] = None, runner: TaskRunner = SEQUENTIAL,
                     name: str = "target") -> np.ndarray:
    """Out-of-fold predictions: row i comes from the model trained without i's fold.

    `train_mask` restricts the training rows (e.g. one regimen arm); every held-out row is
    still predicted.
    """
    X = np.asarray(X, dtype=float)
    target = np.asarray(target)
    if X.shape[0] != plan.n or target.shape[0] != plan.n:
        raise FoldError("{}: plan covers {} rows, data has {}".format(name, plan.n, X.shape[0]))
    plan.validate()
    if target_type == "multiclass_prob" and n_classes is None:
        n_classes = int(target.max()) + 1

    def fit_fold(fold: int) -> tuple[np.ndarray, np.ndarray]:
        train = plan.train_rows(fold)
        if train_mask is not None:
            train = train[train_mask[train]]
        test = np.arange(plan.n) if plan.full_sample else plan.test_rows(fold)
        if train.shape[0] < 2:
            raise FoldError("{}: fold {} leaves {} training row(s)".format(name, fold, train.shape[0]))
        if target_type != "regression":
            expected = 2 if target_type == "binary_prob" else n_classes
            present = np.unique(target[train].astype(int))
            if present.shape[0] < expected:
                raise FoldError("{}: fold {} training rows miss class(es) {}".format(
                    name, fold, sorted(set(range(expected)) - set(present.tolist()))))
        model = learners.fit(kind, X[train], target[train], plan.fold_seed(fold), target_type, n_classes)
        _logger.debug("{}: fold {} trained on {} rows, loss {:.4g}".format(
            name, fold, train.shape[0], model.train_loss))
        return test, learners.predict(model, X[test])

    results = runner.map(fit_fold, range(plan.K))

    if target_type == "multiclass_prob":
        prediction = np.full((plan.n, n_classes), np.nan)
    else:
        prediction = np.full(plan.n, np.nan)
    for test, values in results:
        prediction[test] = values
    return prediction
