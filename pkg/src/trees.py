import logging
from typing import Optional

import numpy as np
from scipy import special

from seeding import derive_seed

LEAF = -1
MAX_BINS = 255
BOOSTING_LOSSES = ("squared", "logistic", "softmax")


def canonical_order(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Row order that depends on the data only, never on how the rows arrived"""
    keys = [Y[:, k] for k in range(Y.shape[1] - 1, -1, -1)] + \
           [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def bin_features(X: np.ndarray, max_bins: int = MAX_BINS) -> np.ndarray:
    """Integer bin codes per column, non-decreasing in the value.

    A column with at most `max_bins` distinct values gets one bin per value, so split
    search over bins is exhaustive; wider columns are cut at quantiles.
    """
    codes = np.empty(X.shape, dtype=np.intp)
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        if values.shape[0] <= max_bins:
            codes[:, j] = np.searchsorted(values, X[:, j])
        else:
            cuts = np.unique(np.quantile(X[:, j], np.linspace(0.0, 1.0, max_bins + 1)[1:-1]))
            codes[:, j] = np.searchsorted(cuts, X[:, j], side="right")
    return codes


def _best_split(X: np.ndarray, codes: np.ndarray, Y: np.ndarray, features: np.ndarray, min_leaf: int):
    """Squared-error split search over bin boundaries; ties go to the lowest feature, then the lowest threshold"""
    n, p = codes.shape
    width = int(codes.max()) + 1 if n and p else 0
    if width < 2 or n < 2 * min_leaf:
        return LEAF, 0.0, 0.0
    flat = (codes + np.arange(p) * width).ravel()
    counts = np.bincount(flat, minlength=p * width).reshape(p, width)
    sums = np.stack([np.bincount(flat, weights=np.repeat(Y[:, k], p), minlength=p * width).reshape(p, width)
                     for k in range(Y.shape[1])], axis=2)
    n_left = np.cumsum(counts, axis=1)[:, :-1].astype(float)
    n_right = n - n_left
    left = np.cumsum(sums, axis=1)[:, :-1, :]
    total = Y.sum(axis=0)

    valid = (n_left >= min_leaf) & (n_right >= min_leaf)
    excluded = np.ones(p, dtype=bool)
    excluded[features] = False
    valid[excluded] = False
    if not valid.any():
        return LEAF, 0.0, 0.0
    gain = np.sum(left ** 2, axis=2) / np.maximum(n_left, 1.0) \
        + np.sum((total - left) ** 2, axis=2) / np.maximum(n_right, 1.0) - float(np.sum(total ** 2)) / n
    gain[~valid] = -np.inf
    j, b = divmod(int(np.argmax(gain)), width - 1)
    if not gain[j, b] > 0.0:
        return LEAF, 0.0, 0.0
    goes_left = codes[:, j] <= b
    x = X[:, j]
    return j, 0.5 * (x[goes_left].max() + x[~goes_left].min()), float(gain[j, b])


class DecisionTree:
    """Multi-output least-squares regression tree; on one-hot targets the leaves hold class frequencies"""

    def __init__(self, max_depth: Optional[int] = None, min_leaf: int = 1, mtry: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        self.max_depth = max_depth
        self.min_leaf = max(1, min_leaf)
        self.mtry = mtry
        self.rng = rng
        self.feature = np.zeros(0, dtype=int)
        self.threshold = np.zeros(0)
        self.left = np.zeros(0, dtype=int)
        self.right = np.zeros(0, dtype=int)
        self.value = np.zeros((0, 1))

    def _features(self, p: int) -> np.ndarray:
        if self.mtry is None or self.mtry >= p or self.rng is None:
            return np.arange(p)
        return np.sort(self.rng.choice(p, size=self.mtry, replace=False))

    def fit(self, X: np.ndarray, Y: np.ndarray, codes: Optional[np.ndarray] = None) -> "DecisionTree":
        if Y.ndim == 1:
            Y = Y[:, None]
        if codes is None:
            codes = bin_features(X)
        feature, threshold, left, right, value = [], [], [], [], []
        stack = [(np.arange(X.shape[0]), 0, None, False)]
        while stack:
            rows, depth, parent, is_left = stack.pop()
            node = len(feature)
            if parent is not None:
                (left if is_left else right)[parent] = node
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            targets = Y[rows]
            value.append(targets.mean(axis=0))

            if (self.max_depth is not None and depth >= self.max_depth) \
                    or rows.shape[0] < 2 * self.min_leaf or np.all(targets == targets[0]):
                continue
            parent_sse = float(np.sum((targets - targets.mean(axis=0)) ** 2))
            j, t, gain = _best_split(X[rows], codes[rows], targets, self._features(X.shape[1]), self.min_leaf)
            if j == LEAF or gain <= 1e-12 * parent_sse:
                continue
            feature[node] = j
            threshold[node] = t
            goes_left = X[rows, j] <= t
            # right pushed first so the left subtree gets the lower node ids
            stack.append((rows[~goes_left], depth + 1, node, False))
            stack.append((rows[goes_left], depth + 1, node, True))

        self.feature = np.array(feature, dtype=int)
        self.threshold = np.array(threshold)
        self.left = np.array(left, dtype=int)
        self.right = np.array(right, dtype=int)
        self.value = np.array(value)
        return self

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id for every row"""
        node = np.zeros(X.shape[0], dtype=int)
        active = np.nonzero(self.feature[node] != LEAF)[0]
        while active.size:
            current = node[active]
            goes_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(goes_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))


class RandomForest:
    """Bagged trees; tree t draws from a generator seeded by (seed, t) on canonically ordered rows"""
    _logger = logging.getLogger(__name__)

    def __init__(self, n_trees: int, max_depth: Optional[int], min_leaf: int, mtry: Optional[int],
                 bootstrap: bool, seed: int):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.mtry = mtry
        self.bootstrap = bootstrap
        self.seed = seed
        self.trees: list[DecisionTree] = list()
        self.n_outputs = 1

    def fit(self, X: np.ndarray, Y: np.ndarray) -> "RandomForest":
        if Y.ndim == 1:
            Y = Y[:, None]
        order = canonical_order(X, Y)
        X, Y = X[order], Y[order]
        codes = bin_features(X)
        n = X.shape[0]
        self.n_outputs = Y.shape[1]
        self.trees = list()
        for t in range(self.n_trees):
            rng = np.random.default_rng(derive_seed(self.seed, t))
            rows = rng.integers(0, n, size=n) if self.bootstrap else np.arange(n)
            tree = DecisionTree(self.max_depth, self.min_leaf, self.mtry, rng)
            self.trees.append(tree.fit(X[rows], Y[rows], codes[rows]))
        self._logger.debug("Random forest: {} trees, {} leaves on average".format(
            self.n_trees, np.mean([tree.n_leaves for tree in self.trees])))
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros((X.shape[0], self.n_outputs))
        for tree in self.trees:
            total += tree.predict(X)
        prediction = total / len(self.trees)
        return prediction[:, 0] if self.n_outputs == 1 else prediction


def newton_leaf_values(leaves: np.ndarray, n_nodes: int, gradient: np.ndarray, hessian: np.ndarray,
                       leaf_l2: float, max_leaf_step: Optional[float]) -> np.ndarray:
    """Per node sum(gradient) / (sum(hessian) + leaf_l2), capped at max_leaf_step in absolute value"""
    G = np.bincount(leaves, weights=gradient, minlength=n_nodes)
    H = np.bincount(leaves, weights=hessian, minlength=n_nodes) + leaf_l2
    values = np.divide(G, H, out=np.zeros(n_nodes), where=H > 1e-12)
    if max_leaf_step is not None:
        values = np.clip(values, -max_leaf_step, max_leaf_step)
    return values


class GradientBoosting:
    """Stage-wise boosting of shallow trees.

    `squared` fits residuals with mean leaves. `logistic` (binary) and `softmax` (one-hot
    targets, one multi-output tree per stage) use regularised Newton leaf values.
    """
    _logger = logging.getLogger(__name__)

    def __init__(self, n_trees: int, learning_rate: float, max_depth: Optional[int], min_leaf: int,
                 subsample: float, seed: int, loss: str = "squared", leaf_l2: float = 1.0,
                 max_leaf_step: Optional[float] = 1.0):
        if loss not in BOOSTING_LOSSES:
            raise ValueError("unknown boosting loss {}".format(loss))
        self.n_trees = n_trees
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.subsample = subsample
        self.seed = seed
        self.loss = loss
        self.leaf_l2 = leaf_l2
        self.max_leaf_step = max_leaf_step
        self.init = np.zeros(1)
        self.trees: list[DecisionTree] = list()

    def _rows(self, t: int, n: int) -> np.ndarray:
        if self.subsample >= 1.0:
            return np.arange(n)
        rng = np.random.default_rng(derive_seed(self.seed, t))
        size = max(2 * self.min_leaf, int(round(self.subsample * n)))
        return np.sort(rng.choice(n, size=min(size, n), replace=False))

    def _initial(self, Y: np.ndarray) -> np.ndarray:
        if self.loss == "logistic":
            return special.logit(np.clip(Y.mean(axis=0), 1e-6, 1.0 - 1e-6))
        if self.loss == "softmax":
            log_prior = np.log(np.clip(Y.mean(axis=0), 1e-6, None))
            return log_prior - log_prior.mean()
        return Y.mean(axis=0)

    def _link(self, F: np.ndarray) -> np.ndarray:
        if self.loss == "logistic":
            return special.expit(F)
        if self.loss == "softmax":
            return special.softmax(F, axis=1)
        return F

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoosting":
        Y = y[:, None] if y.ndim == 1 else y
        order = canonical_order(X, Y)
        X, Y = X[order], Y[order]
        codes = bin_features(X)
        n, K = Y.shape
        self.init = self._initial(Y)
        F = np.tile(self.init, (n, 1))
        # multinomial Newton step scaled by (K - 1) / K
        scale = (K - 1.0) / K if self.loss == "softmax" else 1.0
        self.trees = list()
        for t in range(self.n_trees):
            rows = self._rows(t, n)
            P = self._link(F)
            residual = Y - P
            tree = DecisionTree(self.max_depth, self.min_leaf).fit(X[rows], residual[rows], codes[rows])
            if self.loss != "squared":
                leaves = tree.apply(X[rows])
                hessian = P * (1.0 - P)
                for k in range(K):
                    tree.value[:, k] = scale * newton_leaf_values(
                        leaves, tree.value.shape[0], residual[rows, k], hessian[rows, k],
                        self.leaf_l2, self.max_leaf_step)
            F = F + self.learning_rate * tree.predict(X)
            self.trees.append(tree)
        self._logger.debug("Boosting ({}): {} trees, final training loss proxy {:.4g}".format(
            self.loss, self.n_trees, float(np.mean((Y - self._link(F)) ** 2))))
        return self

    def decision(self, X: np.ndarray) -> np.ndarray:
        F = np.tile(self.init, (X.shape[0], 1))
        for tree in self.trees:
            F = F + self.learning_rate * tree.predict(X)
        return F

    def predict(self, X: np.ndarray) -> np.ndarray:
        P = self._link(self.decision(X))
        return P if self.loss == "softmax" else P[:, 0]


class BoostedClassifier:
    """Logistic boosting for two classes, multinomial softmax boosting for more"""

    def __init__(self, n_classes: int, seed: int, **params):
        self.n_classes = n_classes
        self.seed = seed
        self.params = params
        self.booster: Optional[GradientBoosting] = None

    def fit(self, X: np.ndarray, labels: np.ndarray) -> "BoostedClassifier":
        if self.n_classes == 2:
            self.booster = GradientBoosting(seed=self.seed, loss="logistic", **self.params) \
                .fit(X, (labels == 1).astype(float))
        else:
            self.booster = GradientBoosting(seed=self.seed, loss="softmax", **self.params) \
                .fit(X, np.eye(self.n_classes)[labels])
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.n_classes == 2:
            p = self.booster.predict(X)
            return np.column_stack([1.0 - p, p])
        return self.booster.predict(X)
