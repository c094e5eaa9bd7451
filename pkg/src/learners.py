import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

import linear_models
from trees import BoostedClassifier, GradientBoosting, RandomForest

LEARNER_NAMES = ("mean", "ols", "ridge", "lasso", "logistic", "multinomial_softmax",
                 "random_forest", "boosted_trees")
LINEAR_NAMES = ("ols", "ridge", "lasso")
TARGET_TYPES = ("regression", "binary_prob", "multiclass_prob")
DEFAULT_CLIP_EPS = 0.01

# Stand-ins for the unpublished tuning of the reference study
_DEFAULTS: dict[str, dict] = {
    "random_forest": {"n_trees": 200, "max_depth": 8, "min_leaf": 5},
    "boosted_trees": {"n_trees": 100, "learning_rate": 0.1, "max_depth": 3, "min_leaf": 20,
                      "subsample": 1.0, "leaf_l2": 1.0, "max_leaf_step": 1.0},
}

_logger = logging.getLogger(__name__)


class LearnerError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


@dataclass(frozen=True)
class LearnerKind:
    name: str
    lam: Optional[float] = None
    n_trees: int = 100
    learning_rate: float = 0.1
    max_depth: Optional[int] = 3
    min_leaf: int = 5
    mtry: Optional[int] = None
    subsample: float = 1.0
    bootstrap: bool = True
    leaf_l2: float = 1.0
    max_leaf_step: Optional[float] = 1.0
    clip_eps: float = DEFAULT_CLIP_EPS

    def __post_init__(self):
        if self.name not in LEARNER_NAMES:
            raise LearnerError("unknown learner {!r}; expected one of {}".format(self.name, ", ".join(LEARNER_NAMES)))
        if self.lam is not None and self.lam < 0:
            raise LearnerError("lambda must be non-negative")
        if self.n_trees < 1:
            raise LearnerError("n_trees must be at least 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise LearnerError("learning_rate must lie in (0, 1]")
        if not 0.0 < self.subsample <= 1.0:
            raise LearnerError("subsample must lie in (0, 1]")
        if self.max_depth is not None and self.max_depth < 1:
            raise LearnerError("max_depth must be at least 1")
        if self.min_leaf < 1:
            raise LearnerError("min_leaf must be at least 1")
        if self.mtry is not None and self.mtry < 1:
            raise LearnerError("mtry must be at least 1")
        if self.leaf_l2 < 0:
            raise LearnerError("leaf_l2 must be non-negative")
        if self.max_leaf_step is not None and self.max_leaf_step <= 0:
            raise LearnerError("max_leaf_step must be positive")
        if not 0.0 <= self.clip_eps < 0.5:
            raise LearnerError("clip_eps must lie in [0, 0.5)")

    @staticmethod
    def from_config(config: Any) -> "LearnerKind":
        """Build from a name or a {kind: ..., params...} object, filling per-learner defaults"""
        if isinstance(config, LearnerKind):
            return config
        if isinstance(config, str):
            config = {"kind": config}
        params = dict(config)
        name = params.pop("kind", params.pop("name", None))
        if name is None:
            raise LearnerError("learner configuration needs a kind: {}".format(config))
        merged = dict(_DEFAULTS.get(name, dict()))
        merged.update(params)
        allowed = {f.name for f in dataclasses.fields(LearnerKind)} - {"name"}
        unknown = set(merged) - allowed
        if unknown:
            raise LearnerError("learner {}: unknown parameter(s) {}".format(name, ", ".join(sorted(unknown))))
        return LearnerKind(name, **merged)

    @property
    def is_linear(self) -> bool:
        return self.name in LINEAR_NAMES

    @property
    def learner_id(self) -> str:
        if self.name in ("mean", "ols", "logistic", "multinomial_softmax"):
            return self.name
        if self.name in ("ridge", "lasso"):
            return "{}(lambda={})".format(self.name, "cv" if self.lam is None else self.lam)
        if self.name == "random_forest":
            return "random_forest(trees={},depth={},leaf={},mtry={})".format(
                self.n_trees, self.max_depth, self.min_leaf, self.mtry)
        return "boosted_trees(trees={},rate={},depth={},leaf={},subsample={},l2={},step={})".format(
            self.n_trees, self.learning_rate, self.max_depth, self.min_leaf, self.subsample, self.leaf_l2,
            self.max_leaf_step)

    def to_config(self) -> dict:
        config = {"kind": self.name}
        config.update({k: v for k, v in dataclasses.asdict(self).items() if k != "name"})
        return config


@dataclass(frozen=True)
class FittedModel:
    kind: LearnerKind
    target_type: str
    n_classes: int
    n_features: int
    model: Any
    train_loss: float
    diagnostics: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self, X)


def _check_inputs(X: np.ndarray, target: np.ndarray) -> None:
    if X.ndim != 2 or target.ndim != 1:
        raise LearnerError("X must be a matrix and the target a vector")
    if X.shape[0] != target.shape[0]:
        raise LearnerError("X has {} rows, target has {}".format(X.shape[0], target.shape[0]))
    if X.shape[0] < 2:
        raise LearnerError("at least two training rows are required")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(target)):
        raise LearnerError("non-finite training values")


def _default_mtry(kind: LearnerKind, p: int, classification: bool) -> int:
    if kind.mtry is not None:
        return min(kind.mtry, p)
    return max(1, int(np.sqrt(p))) if classification else max(1, p // 3)


def _fit_regression(kind: LearnerKind, X: np.ndarray, y: np.ndarray, seed: int) -> tuple[Any, dict]:
    name = kind.name
    if name == "mean":
        return linear_models.MeanModel(y.mean()), dict()
    if name == "ols":
        return linear_models.fit_ols(X, y), dict()
    if name == "ridge":
        lam = kind.lam
        if lam is None:
            lam = linear_models.select_lambda(X, y, linear_models.ridge_grid(X), linear_models.fit_ridge,
                                              linear_models.squared_loss, seed)
        return linear_models.fit_ridge(X, y, lam), {"lambda": lam}
    if name == "lasso":
        lam = kind.lam
        if lam is None:
            lam = linear_models.select_lambda(X, y, linear_models.lasso_grid(X, y),
                                              lambda a, b, c: linear_models.fit_lasso(a, b, c)[0],
                                              linear_models.squared_loss, seed)
        model, diagnostics = linear_models.fit_lasso(X, y, lam)
        diagnostics["lambda"] = lam
        return model, diagnostics
    if name == "random_forest":
        forest = RandomForest(kind.n_trees, kind.max_depth, kind.min_leaf,
                              _default_mtry(kind, X.shape[1], False), kind.bootstrap, seed)
        return forest.fit(X, y), dict()
    if name == "boosted_trees":
        booster = GradientBoosting(kind.n_trees, kind.learning_rate, kind.max_depth, kind.min_leaf,
                                   kind.subsample, seed)
        return booster.fit(X, y), dict()
    raise LearnerError("learner {} cannot fit a regression target".format(name))


def _fit_classifier(kind: LearnerKind, X: np.ndarray, labels: np.ndarray, n_classes: int,
                    seed: int) -> tuple[Any, dict]:
    name = kind.name
    if name == "mean":
        return linear_models.MeanModel(np.bincount(labels, minlength=n_classes) / labels.shape[0]), dict()
    if name in ("ols", "logistic", "multinomial_softmax"):
        return linear_models.fit_softmax(X, labels, n_classes)
    if name == "ridge":
        return linear_models.fit_penalised_softmax(X, labels, n_classes, "l2", kind.lam, seed)
    if name == "lasso":
        return linear_models.fit_penalised_softmax(X, labels, n_classes, "l1", kind.lam, seed)
    if name == "random_forest":
        forest = RandomForest(kind.n_trees, kind.max_depth, kind.min_leaf,
                              _default_mtry(kind, X.shape[1], True), kind.bootstrap, seed)
        return forest.fit(X, np.eye(n_classes)[labels]), dict()
    booster = BoostedClassifier(n_classes, seed, n_trees=kind.n_trees, learning_rate=kind.learning_rate,
                                max_depth=kind.max_depth, min_leaf=kind.min_leaf, subsample=kind.subsample,
                                leaf_l2=kind.leaf_l2, max_leaf_step=kind.max_leaf_step)
    return booster.fit(X, labels), dict()


def fit(kind: LearnerKind, X: np.ndarray, target: np.ndarray, seed: int,
        target_type: str = "regression", n_classes: Optional[int] = None) -> FittedModel:
    """Fit a nuisance model; squared error for regression, log-loss for class probabilities"""
    X = np.asarray(X, dtype=float)
    target = np.asarray(target)
    if X.ndim == 1:
        X = X[:, None]
    if target_type not in TARGET_TYPES:
        raise LearnerError("unknown target type {}".format(target_type))
    _check_inputs(X, target.astype(float))

    if target_type == "regression":
        y = target.astype(float)
        model, diagnostics = _fit_regression(kind, X, y, seed)
        loss = float(np.mean((y - model.predict(X)) ** 2))
        return FittedModel(kind, target_type, 0, X.shape[1], model, loss, diagnostics)

    if not np.all(target == np.round(target)):
        raise LearnerError("class labels must be integers")
    labels = target.astype(int)
    if target_type == "binary_prob":
        n_classes = 2
    elif n_classes is None:
        n_classes = int(labels.max()) + 1
    if n_classes < 2:
        raise LearnerError("classification needs at least two classes")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LearnerError("class labels must lie in 0..{}".format(n_classes - 1))
    absent = [k for k in range(n_classes) if not np.any(labels == k)]
    if absent:
        raise LearnerError("class(es) {} absent from the training rows".format(absent))
    model, diagnostics = _fit_classifier(kind, X, labels, n_classes, seed)
    P = np.clip(model.predict(X), 1e-15, 1.0)
    loss = float(-np.mean(np.log(P[np.arange(labels.shape[0]), labels])))
    return FittedModel(kind, target_type, n_classes, X.shape[1], model, loss, diagnostics)


def predict(model: FittedModel, X: np.ndarray) -> np.ndarray:
    """Regression vector, P(class 1) vector, or a clipped and renormalised probability matrix"""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[1] != model.n_features:
        raise LearnerError("model trained on {} features, got {}".format(model.n_features, X.shape[1]))
    raw = model.model.predict(X)
    if not np.all(np.isfinite(raw)):
        raise LearnerError("non-finite predictions from {}".format(model.kind.learner_id))
    if model.target_type == "regression":
        return raw

    eps = model.kind.clip_eps
    if model.target_type == "binary_prob":
        return np.clip(raw[:, 1], eps, 1.0 - eps)
    clipped = np.clip(raw, eps, 1.0 - eps)
    return clipped / clipped.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class LearnerSet:
    """Learner per role, with optional per-column overrides"""
    regression: LearnerKind
    classification: LearnerKind
    overrides: tuple = ()

    @staticmethod
    def single(kind: LearnerKind) -> "LearnerSet":
        return LearnerSet(kind, kind)

    @staticmethod
    def from_config(config: Any, clip_eps: Optional[float] = None) -> "LearnerSet":
        if isinstance(config, LearnerSet):
            return config
        if isinstance(config, (str, LearnerKind)) or "kind" in config:
            regression = classification = LearnerKind.from_config(config)
            overrides: tuple = ()
        else:
            if "regression" not in config:
                raise LearnerError("learners need a kind or a regression entry")
            regression = LearnerKind.from_config(config["regression"])
            classification = LearnerKind.from_config(config.get("classification", config["regression"]))
            overrides = tuple(sorted((name, LearnerKind.from_config(value))
                                     for name, value in config.get("overrides", dict()).items()))
        learner_set = LearnerSet(regression, classification, overrides)
        return learner_set.with_clip_eps(clip_eps) if clip_eps is not None else learner_set

    def with_clip_eps(self, clip_eps: float) -> "LearnerSet":
        return LearnerSet(dataclasses.replace(self.regression, clip_eps=clip_eps),
                          dataclasses.replace(self.classification, clip_eps=clip_eps),
                          tuple((name, dataclasses.replace(kind, clip_eps=clip_eps))
                                for name, kind in self.overrides))

    def for_target(self, name: str, classification: bool) -> LearnerKind:
        for override, kind in self.overrides:
            if override == name:
                return kind
        return self.classification if classification else self.regression

    def ids(self) -> dict:
        ids = {"regression": self.regression.learner_id, "classification": self.classification.learner_id}
        ids.update({name: kind.learner_id for name, kind in self.overrides})
        return ids
