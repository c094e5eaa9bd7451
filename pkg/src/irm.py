import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from config import ConfigError
from crossfit import FoldPlan, crossfit_predict, make_folds
from dataset import Dataset
from learners import LearnerKind
from plm import EstimationError, run_splits
from report import EstimateReport
from task_runner import SEQUENTIAL, TaskRunner

# propensities never reach this after clipping
PROPENSITY_FLOOR = 1e-12

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ArmLearners:
    """Learner for the generalized propensity score and for the per-arm outcome models"""
    propensity: LearnerKind
    outcome: LearnerKind

    @staticmethod
    def from_config(config: Any, clip_eps: Optional[float] = None) -> "ArmLearners":
        if isinstance(config, ArmLearners):
            return config
        if isinstance(config, (str, LearnerKind)) or "kind" in config:
            propensity = outcome = LearnerKind.from_config(config)
        else:
            if "propensity" not in config and "classification" not in config:
                raise ConfigError("irm learners need a kind, or propensity and outcome entries")
            if "outcome" not in config and "regression" not in config:
                raise ConfigError("irm learners need an outcome entry next to the propensity entry")
            propensity = LearnerKind.from_config(config.get("propensity", config.get("classification")))
            outcome = LearnerKind.from_config(config.get("outcome", config.get("regression")))
        if clip_eps is not None:
            propensity = dataclasses.replace(propensity, clip_eps=clip_eps)
        return ArmLearners(propensity, outcome)

    def ids(self) -> dict:
        return {"propensity": self.propensity.learner_id, "outcome": self.outcome.learner_id}

    @property
    def label(self) -> str:
        return "{}/{}".format(self.propensity.learner_id, self.outcome.learner_id)


@dataclass(frozen=True, eq=False)
class ArmNuisances:
    """Cross-fitted propensities m_hat[i, d-1] and per-arm outcome predictions g_hat[i, d-1]"""
    m_hat: np.ndarray
    g_hat: np.ndarray

    @property
    def D(self) -> int:
        return self.m_hat.shape[1]


def fit_arm_nuisances(dataset: Dataset, plan: FoldPlan, arm_learners: ArmLearners,
                      runner: TaskRunner = SEQUENTIAL) -> ArmNuisances:
    """One multiclass propensity model, one outcome model per arm fit on that arm's training rows"""
    if dataset.regimen is None:
        raise EstimationError("dataset has no regimen column")
    D = dataset.n_regimens
    if D < 2:
        raise EstimationError("at least two regimens are needed")
    labels = dataset.regimen - 1
    m_hat = crossfit_predict(dataset.X, labels, arm_learners.propensity, plan, "multiclass_prob", D,
                             runner=runner, name=dataset.regimen_name)
    g_hat = np.column_stack([
        crossfit_predict(dataset.X, dataset.Y, arm_learners.outcome, plan, train_mask=dataset.regimen == d,
                         runner=runner, name="{}|{}={}".format(dataset.outcome_name, dataset.regimen_name,
                                                               dataset.regimen_labels[d - 1]))
        for d in range(1, D + 1)])
    if not np.all(np.isfinite(g_hat)) or not np.all(np.isfinite(m_hat)):
        raise EstimationError("non-finite nuisance predictions")
    return ArmNuisances(m_hat, g_hat)


def _check_contrast(nuisances: ArmNuisances, b: int, c: int) -> None:
    if b == c:
        raise ConfigError("contrast needs two different arms, got {} and {}".format(b, c))
    for arm in (b, c):
        if not 1 <= arm <= nuisances.D:
            raise ConfigError("arm {} outside 1..{}".format(arm, nuisances.D))


def potential_outcomes(nuisances: ArmNuisances, dataset: Dataset) -> np.ndarray:
    """Per-row augmented potential outcome for every arm: g_d + 1{R=d}(Y - g_d) / m_d"""
    if np.min(nuisances.m_hat) < PROPENSITY_FLOOR:
        raise EstimationError("propensity below numeric floor")
    received = dataset.regimen[:, None] == np.arange(1, nuisances.D + 1)[None, :]
    correction = np.where(received, (dataset.Y[:, None] - nuisances.g_hat) / nuisances.m_hat, 0.0)
    return nuisances.g_hat + correction


def irm_score(Y: np.ndarray, R: np.ndarray, b: int, c: int, theta: float, nuisances: dict) -> np.ndarray:
    """Orthogonal per-row score for ATE_bc; nuisances 'm' and 'g' are n x D with column d-1 for arm d"""
    m, g = nuisances["m"], nuisances["g"]
    theta = float(np.atleast_1d(theta)[0])
    return (g[:, b - 1] - g[:, c - 1]
            + (R == b) * (Y - g[:, b - 1]) / m[:, b - 1]
            - (R == c) * (Y - g[:, c - 1]) / m[:, c - 1]
            - theta)


def contrast_name(dataset: Dataset, b: int, c: int) -> str:
    return "ATE[{}-{}]".format(dataset.regimen_labels[b - 1], dataset.regimen_labels[c - 1])


def aipw_contrasts(nuisances: ArmNuisances, dataset: Dataset, contrasts: Sequence[tuple],
                   n_folds: int = 0, learner_ids: Optional[dict] = None) -> EstimateReport:
    """Doubly robust estimates for several contrasts from one nuisance fit, with joint covariance"""
    for b, c in contrasts:
        _check_contrast(nuisances, b, c)
    mu = potential_outcomes(nuisances, dataset)
    scores = np.column_stack([mu[:, b - 1] - mu[:, c - 1] for b, c in contrasts])
    theta = scores.mean(axis=0)
    psi = scores - theta
    sigma = psi.T @ psi / dataset.n
    baselines = {"ipw": [ipw_ate(nuisances, dataset, b, c) for b, c in contrasts],
                 "ipw_hajek": [ipw_ate(nuisances, dataset, b, c, hajek=True) for b, c in contrasts],
                 "regression": [regression_ate(nuisances, dataset, b, c) for b, c in contrasts]}
    return EstimateReport.from_sigma("irm_aipw", [contrast_name(dataset, b, c) for b, c in contrasts],
                                     theta, sigma, dataset.n, n_folds, learner_ids=learner_ids or dict(),
                                     score_residual_norm=float(np.max(np.abs(psi.mean(axis=0)))),
                                     diagnostics={"baselines": baselines})


def aipw_ate(nuisances: ArmNuisances, dataset: Dataset, b: int, c: int) -> EstimateReport:
    return aipw_contrasts(nuisances, dataset, [(b, c)])


def irm_variance(nuisances: ArmNuisances, dataset: Dataset, b: int, c: int,
                 ate_hat: float) -> tuple[float, float]:
    """Mean squared orthogonal score at the estimate; returns (sigma2, se)"""
    _check_contrast(nuisances, b, c)
    mu = potential_outcomes(nuisances, dataset)
    psi = mu[:, b - 1] - mu[:, c - 1] - ate_hat
    sigma2 = float(np.mean(psi ** 2))
    return sigma2, float(np.sqrt(sigma2 / dataset.n))


def ipw_ate(nuisances: ArmNuisances, dataset: Dataset, b: int, c: int, hajek: bool = False) -> float:
    """Inverse propensity weighting; `hajek` normalises the weights within each arm"""
    _check_contrast(nuisances, b, c)
    means = list()
    for arm in (b, c):
        weights = (dataset.regimen == arm) / nuisances.m_hat[:, arm - 1]
        if hajek:
            means.append(float(np.sum(weights * dataset.Y) / np.sum(weights)))
        else:
            means.append(float(np.mean(weights * dataset.Y)))
    return means[0] - means[1]


def regression_ate(nuisances: ArmNuisances, dataset: Dataset, b: int, c: int) -> float:
    _check_contrast(nuisances, b, c)
    return float(np.mean(nuisances.g_hat[:, b - 1] - nuisances.g_hat[:, c - 1]))


def _median_baselines(report: EstimateReport) -> EstimateReport:
    if not report.splits:
        return report
    baselines = {key: np.median([r.diagnostics["baselines"][key] for r in report.splits], axis=0).tolist()
                 for key in report.splits[0].diagnostics["baselines"]}
    return report.with_diagnostics(baselines=baselines)


def estimate_irm_contrasts(dataset: Dataset, contrasts: Sequence[tuple], K: int, arm_learners: ArmLearners,
                           n_splits: int, seed: int, runner: TaskRunner = SEQUENTIAL) -> EstimateReport:
    """Stratified cross-fitting, AIPW contrasts, split-median aggregation"""
    if dataset.regimen is None:
        raise EstimationError("dataset has no regimen column")
    if not contrasts:
        raise ConfigError("no contrasts requested")
    for b, c in contrasts:
        if b == c:
            raise ConfigError("contrast needs two different arms, got {} and {}".format(b, c))
    inner = runner.inner() if n_splits > 1 else runner

    def one_split(split_seed: int) -> EstimateReport:
        plan = make_folds(dataset.n, K, split_seed, dataset.regimen)
        nuisances = fit_arm_nuisances(dataset, plan, arm_learners, inner)
        report = aipw_contrasts(nuisances, dataset, contrasts, K, arm_learners.ids())
        _logger.debug("IRM seed {}: {}".format(split_seed, np.array2string(report.theta, precision=4)))
        return report.with_diagnostics(seed=split_seed, fold_sizes=plan.fold_sizes())

    return _median_baselines(run_splits(one_split, n_splits, seed, runner if n_splits > 1 else SEQUENTIAL))


def estimate_irm(dataset: Dataset, b: int, c: int, K: int, arm_learners: ArmLearners, n_splits: int,
                 seed: int, runner: TaskRunner = SEQUENTIAL) -> EstimateReport:
    """End-to-end ATE_bc for regimen codes b and c"""
    return estimate_irm_contrasts(dataset, [(b, c)], K, arm_learners, n_splits, seed, runner)


def all_contrasts(D: int) -> list[tuple]:
    """(b, c) for every b > c"""
    return [(b, c) for b in range(2, D + 1) for c in range(1, b)]
