import logging
from typing import Callable, Optional

import numpy as np
from scipy import linalg, special

_logger = logging.getLogger(__name__)

MAX_ITER = 500
GRADIENT_TOL = 1e-8
LASSO_TOL = 1e-10
LASSO_MAX_SWEEPS = 10000
CV_FOLDS = 5
CV_GRID_SIZE = 20


class MeanModel:
    """Training mean for regression, class frequencies for classification"""

    def __init__(self, value: np.ndarray):
        self.value = np.atleast_1d(np.asarray(value, dtype=float))

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.value.size == 1:
            return np.full(X.shape[0], self.value[0])
        return np.tile(self.value, (X.shape[0], 1))


class LinearModel:
    def __init__(self, coef: np.ndarray, intercept: float):
        self.coef = coef
        self.intercept = intercept

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.intercept + X @ self.coef


def fit_ols(X: np.ndarray, y: np.ndarray) -> LinearModel:
    design = np.column_stack([np.ones(X.shape[0]), X])
    beta, _, _, _ = linalg.lstsq(design, y)
    return LinearModel(beta[1:], float(beta[0]))


def fit_ridge(X: np.ndarray, y: np.ndarray, lam: float) -> LinearModel:
    """Minimise (1/2n)|y - b - Xw|^2 + (lam/2)|w|^2"""
    n, p = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc / n + lam * np.eye(p)
    coef = linalg.lstsq(gram, Xc.T @ (y - y_mean) / n)[0] if lam == 0 else \
        linalg.solve(gram, Xc.T @ (y - y_mean) / n, assume_a="pos")
    return LinearModel(coef, float(y_mean - x_mean @ coef))


def _soft_threshold(value, threshold):
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def fit_lasso(X: np.ndarray, y: np.ndarray, lam: float,
              tol: float = LASSO_TOL, max_sweeps: int = LASSO_MAX_SWEEPS) -> tuple[LinearModel, dict]:
    """Cyclic coordinate descent on (1/2n)|y - b - Xw|^2 + lam|w|_1, intercept unpenalised"""
    n, p = X.shape
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    norms = (Xc ** 2).sum(axis=0) / n
    coef = np.zeros(p)
    residual = yc.copy()
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(p):
            if norms[j] == 0.0:
                continue
            old = coef[j]
            rho = Xc[:, j] @ residual / n + norms[j] * old
            new = float(_soft_threshold(rho, lam)) / norms[j]
            if new != old:
                residual -= Xc[:, j] * (new - old)
                coef[j] = new
                max_change = max(max_change, abs(new - old) * np.sqrt(norms[j]))
        if max_change <= tol * max(1.0, np.sqrt(np.mean(yc ** 2))):
            break
    model = LinearModel(coef, float(y_mean - x_mean @ coef))
    diagnostics = {"sweeps": sweeps, "kkt_violation": lasso_kkt_violation(X, y, model, lam)}
    return model, diagnostics


def lasso_kkt_violation(X: np.ndarray, y: np.ndarray, model: LinearModel, lam: float) -> float:
    """Largest subgradient optimality violation over the coordinates"""
    n = X.shape[0]
    residual = y - model.predict(X)
    gradient = (X - X.mean(axis=0)).T @ residual / n
    active = model.coef != 0.0
    violation = np.where(active,
                         np.abs(gradient - lam * np.sign(model.coef)),
                         np.maximum(np.abs(gradient) - lam, 0.0))
    return float(violation.max()) if violation.size else 0.0


def _cv_folds(n: int, seed: int) -> np.ndarray:
    k = min(CV_FOLDS, n)
    return np.random.default_rng(seed).permutation(n) % k


def select_lambda(X: np.ndarray, y: np.ndarray, grid: np.ndarray, fitter: Callable,
                  loss: Callable, seed: int) -> float:
    """Pick the grid value with the lowest K-fold held-out loss inside the training rows"""
    folds = _cv_folds(X.shape[0], seed)
    scores = np.zeros(len(grid))
    for fold in np.unique(folds):
        train = folds != fold
        test = ~train
        for i, lam in enumerate(grid):
            model = fitter(X[train], y[train], lam)
            scores[i] += loss(model, X[test], y[test]) * test.sum()
    best = int(np.argmin(scores))
    _logger.debug("CV lambda {:.3g} (grid {:.3g}..{:.3g})".format(grid[best], grid[0], grid[-1]))
    return float(grid[best])


def lasso_grid(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    lam_max = np.max(np.abs((X - X.mean(axis=0)).T @ (y - y.mean()))) / X.shape[0]
    if lam_max == 0.0:
        return np.zeros(1)
    return lam_max * np.logspace(0, -3, CV_GRID_SIZE)


def ridge_grid(X: np.ndarray) -> np.ndarray:
    scale = float(np.mean(X.var(axis=0)))
    return (scale if scale > 0 else 1.0) * np.logspace(-4, 2, CV_GRID_SIZE)


def squared_loss(model, X, y) -> float:
    return float(np.mean((y - model.predict(X)) ** 2))


class SoftmaxModel:
    """Logistic (two classes, one logit) or multinomial softmax regression on standardised inputs"""

    def __init__(self, mean: np.ndarray, scale: np.ndarray, weights: np.ndarray, n_classes: int):
        self.mean = mean
        self.scale = scale
        self.weights = weights
        self.n_classes = n_classes

    def decision(self, X: np.ndarray) -> np.ndarray:
        Xa = np.column_stack([np.ones(X.shape[0]), (X - self.mean) / self.scale])
        return Xa @ self.weights

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = self.decision(X)
        if self.n_classes == 2:
            p = special.expit(Z[:, 0])
            return np.column_stack([1.0 - p, p])
        return special.softmax(Z, axis=1)


def _softmax_objective(Xa: np.ndarray, labels: np.ndarray, n_classes: int, l2: float):
    n = Xa.shape[0]
    if n_classes == 2:
        y = labels.astype(float)

        def value(W):
            z = Xa @ W[:, 0]
            return float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(np.sum(W[1:] ** 2))

        def gradient(W):
            z = Xa @ W[:, 0]
            g = (Xa.T @ (special.expit(z) - y) / n)[:, None]
            g[1:] += l2 * W[1:]
            return g
    else:
        onehot = np.eye(n_classes)[labels]

        def value(W):
            log_p = special.log_softmax(Xa @ W, axis=1)
            return float(-np.mean(np.sum(onehot * log_p, axis=1))) + 0.5 * l2 * float(np.sum(W[1:] ** 2))

        def gradient(W):
            g = Xa.T @ (special.softmax(Xa @ W, axis=1) - onehot) / n
            g[1:] += l2 * W[1:]
            return g

    return value, gradient


def fit_softmax(X: np.ndarray, labels: np.ndarray, n_classes: int, l2: float = 0.0, l1: float = 0.0,
                max_iter: int = MAX_ITER, tol: float = GRADIENT_TOL) -> tuple[SoftmaxModel, dict]:
    """Full-batch (proximal) gradient descent with backtracking line search"""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0.0] = 1.0
    Xa = np.column_stack([np.ones(X.shape[0]), (X - mean) / scale])
    k = 1 if n_classes == 2 else n_classes
    frequencies = np.clip(np.bincount(labels, minlength=n_classes) / labels.shape[0], 1e-12, 1.0 - 1e-12)
    W = np.zeros((Xa.shape[1], k))
    if n_classes == 2:
        W[0, 0] = special.logit(frequencies[1])
    else:
        W[0] = np.log(frequencies) - np.log(frequencies).mean()

    value, gradient = _softmax_objective(Xa, labels, n_classes, l2)
    f = value(W)
    g = gradient(W)
    step = 1.0
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        while True:
            W_new = W - step * g
            if l1 > 0.0:
                W_new[1:] = _soft_threshold(W_new[1:], step * l1)
            delta = W_new - W
            f_new = value(W_new)
            if f_new <= f + np.sum(g * delta) + np.sum(delta ** 2) / (2.0 * step) + 1e-15 * abs(f):
                break
            step *= 0.5
            if step < 1e-20:
                break
        mapping = delta / step
        W, f = W_new, f_new
        g = gradient(W)
        norm = np.max(np.abs(mapping)) if l1 > 0.0 else np.max(np.abs(g))
        if norm < tol or step < 1e-20:
            converged = norm < tol
            break
        step = min(step * 2.0, 1e4)
    return SoftmaxModel(mean, scale, W, n_classes), {"iterations": iterations, "converged": converged}


def log_loss(model, X, labels) -> float:
    P = np.clip(model.predict(X), 1e-15, 1.0)
    return float(-np.mean(np.log(P[np.arange(labels.shape[0]), labels])))


def fit_penalised_softmax(X: np.ndarray, labels: np.ndarray, n_classes: int, penalty: str,
                          lam: Optional[float], seed: int) -> tuple[SoftmaxModel, dict]:
    """L1/L2 penalised GLM; lam=None picks the penalty by in-training cross-validation"""
    if lam is None:
        grid = np.logspace(-1, -4, CV_GRID_SIZE // 2)

        def fitter(X_train, y_train, candidate):
            kwargs = {"l1": candidate} if penalty == "l1" else {"l2": candidate}
            return fit_softmax(X_train, y_train, n_classes, max_iter=100, **kwargs)[0]

        lam = select_lambda(X, labels, grid, fitter, log_loss, seed)
    kwargs = {"l1": lam} if penalty == "l1" else {"l2": lam}
    model, diagnostics = fit_softmax(X, labels, n_classes, **kwargs)
    diagnostics["lambda"] = lam
    return model, diagnostics
