import dataclasses
import functools
import logging
import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, special

import simgen
from crossfit import make_folds
from dataset import Dataset, TreatmentColumn
from design import encode_treatments
from irm import (ArmLearners, ArmNuisances, aipw_ate, aipw_contrasts, all_contrasts, fit_arm_nuisances, irm_score,
                 regression_ate)
from learners import LearnerKind, LearnerSet
from plm import check_orthogonality, estimate_plm, naive_plm_score, plm_score, residualize
from report import write_json, write_table
from seeding import derive_seed
from simgen import CohortSimConfig, IrmSimConfig, PlmSimConfig

ORTHOGONALITY_MULTIPLIER = 5.0
NAIVE_FACTOR = 10.0
FWL_TOLERANCE = 1e-8
IDENTITY_TOLERANCE = 1e-12
ROW_SUM_TOLERANCE = 1e-9
DR_MULTIPLIER = 3.0
DR_OUTCOME_SHIFT = 5.0
DR_REGRESSION = "regression, wrong g"
SUITES = ("orthogonality", "fwl", "identities", "double_robustness")
RESULT_COLUMNS = ("suite", "name", "passed", "value", "bound", "detail")

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    passed: bool
    value: float
    bound: float
    detail: str = ""


def _detail(result) -> str:
    return "studentized derivative; max |derivative| * sqrt(n) = {:.4g}".format(result.max_root_n())


def orthogonality_suite(n: int = 10000, seed: int = 0) -> list[CheckResult]:
    """Finite-difference derivatives of the orthogonal scores at oracle nuisances, against the naive moment"""
    results = list()
    dataset = simgen.gen_plm(PlmSimConfig(n=n, seed=seed))
    oracle = dataset.oracle
    A = encode_treatments(dataset, simgen.plm_treatment_spec()).columns
    theta = np.array(PlmSimConfig().theta_true)
    nuisances = {"m": np.column_stack([oracle["pi"], oracle["m2"], oracle["m_interaction"]]), "l": oracle["l"]}
    X = dataset.X
    score = functools.partial(plm_score, A, dataset.Y)
    naive = functools.partial(naive_plm_score, A, dataset.Y)
    limit = ORTHOGONALITY_MULTIPLIER

    directions = {"l": {"l": np.sin(X[:, 0])}}
    for j, name in enumerate(("A1", "A2", "A1:A2")):
        delta = np.zeros_like(nuisances["m"])
        delta[:, j] = 1.0 + 0.5 * np.cos(X[:, 1])
        directions["m[{}]".format(name)] = {"m": delta}
    for label, direction in directions.items():
        result = check_orthogonality(score, theta, nuisances, direction)
        results.append(CheckResult("orthogonality", "plm {}".format(label), result.holds(limit),
                                   result.max_studentized(), limit, _detail(result)))
        if "m" in direction:
            contrast = check_orthogonality(naive, theta, nuisances, direction)
            results.append(CheckResult("orthogonality", "naive plm {}".format(label),
                                       contrast.max_studentized() >= NAIVE_FACTOR * limit,
                                       contrast.max_studentized(), NAIVE_FACTOR * limit,
                                       "naive score must exceed the bound; " + _detail(contrast)))

    irm_data = simgen.gen_irm(IrmSimConfig(n=n, seed=seed))
    X = irm_data.X
    truths = simgen.true_ates()
    arms = {"m": irm_data.oracle["m"], "g": irm_data.oracle["g"]}
    for b, c in all_contrasts(3):
        score = functools.partial(irm_score, irm_data.Y, irm_data.regimen, b, c)
        for key, arm in (("m", b), ("m", c), ("g", b), ("g", c)):
            delta = np.zeros_like(arms[key])
            # relative shift keeps perturbed propensities positive
            delta[:, arm - 1] = 0.5 * np.sin(X[:, 0]) * (arms["m"][:, arm - 1] if key == "m" else 1.0)
            result = check_orthogonality(score, truths[(b, c)], arms, {key: delta})
            results.append(CheckResult("orthogonality", "irm ATE[{}-{}] {}[{}]".format(b, c, key, arm),
                                       result.holds(limit), result.max_studentized(), limit, _detail(result)))
    return results


def _linear_dataset(n: int, p: int, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    beta = np.linspace(-1.0, 1.0, p)
    A1 = (rng.random(n) < special.expit(0.5 * X[:, 0] - 0.3 * X[:, 1])).astype(float)
    A2 = X @ (beta / 2.0) + rng.standard_normal(n)
    Y = 2.0 * A1 - A2 + 0.5 * A1 * A2 + X @ beta + rng.standard_normal(n)
    return Dataset(X, Y, (TreatmentColumn("A1", "binary", A1), TreatmentColumn("A2", "continuous", A2)))


def full_ols_coefficients(dataset: Dataset, design_columns: np.ndarray) -> np.ndarray:
    """Treatment coefficients of Y on [design, X, 1]"""
    regressors = np.column_stack([design_columns, dataset.X, np.ones(dataset.n)])
    beta = linalg.lstsq(regressors, dataset.Y)[0]
    return beta[:design_columns.shape[1]]


def fwl_suite(n: int = 500, p: int = 10, seed: int = 0) -> list[CheckResult]:
    """Full-sample OLS partialling out reproduces the long regression"""
    dataset = _linear_dataset(n, p, seed)
    spec = simgen.plm_treatment_spec()
    report = estimate_plm(dataset, spec, 1, LearnerSet.single(LearnerKind("ols")), seed)
    expected = full_ols_coefficients(dataset, encode_treatments(dataset, spec).columns)
    error = float(np.max(np.abs(report.theta - expected)) / np.max(np.abs(expected)))
    return [CheckResult("fwl", "plm K=1 ols vs long regression", error <= FWL_TOLERANCE, error, FWL_TOLERANCE)]


def identities_suite(seed: int = 0) -> list[CheckResult]:
    """AIPW antisymmetry and transitivity, categorical residual row sums, fold partition"""
    results = list()
    dataset = simgen.gen_irm(IrmSimConfig(n=2000, seed=seed))
    plan = make_folds(dataset.n, 5, seed, dataset.regimen)
    arm_learners = ArmLearners(LearnerKind("multinomial_softmax"), LearnerKind("ols"))
    nuisances = fit_arm_nuisances(dataset, plan, arm_learners)
    worst = 0.0
    for b, c in all_contrasts(3):
        worst = max(worst, abs(aipw_ate(nuisances, dataset, b, c).estimate()
                               + aipw_ate(nuisances, dataset, c, b).estimate()))
    results.append(CheckResult("identities", "aipw antisymmetry", worst == 0.0, worst, 0.0))
    report = aipw_contrasts(nuisances, dataset, [(2, 1), (3, 2), (3, 1)])
    gap = abs(report.theta[0] + report.theta[1] - report.theta[2])
    results.append(CheckResult("identities", "aipw transitivity", gap <= IDENTITY_TOLERANCE, gap,
                               IDENTITY_TOLERANCE))

    cohort = simgen.gen_cohort(CohortSimConfig(seed=seed))
    design = encode_treatments(cohort, simgen.cohort_treatment_spec())
    cohort_plan = make_folds(cohort.n, 5, seed)
    learner_set = LearnerSet(LearnerKind("ols"), LearnerKind("multinomial_softmax"))
    residuals = residualize(cohort, design, cohort_plan, learner_set)
    row_sum = float(np.max(np.abs(residuals.level_residuals["ART"].sum(axis=1))))
    results.append(CheckResult("identities", "categorical residual row sums", row_sum <= ROW_SUM_TOLERANCE,
                               row_sum, ROW_SUM_TOLERANCE))

    cohort_plan.validate()
    balanced = max(cohort_plan.fold_sizes()) - min(cohort_plan.fold_sizes())
    results.append(CheckResult("identities", "fold partition", balanced <= 1, float(balanced), 1.0))
    return results


def double_robustness_suite(n: int = 20000, replicates: int = 20, seed: int = 0,
                            contrast: tuple = (3, 1)) -> list[CheckResult]:
    """AIPW with one oracle nuisance stays unbiased; with both nuisances wrong it does not.

    The wrong outcome model shifts arm b by 5 (1 + X1), which biases the regression
    contrast; the wrong propensity is uniform over arms.
    """
    b, c = contrast
    truth = simgen.true_ates()[contrast]
    errors = {"oracle m, wrong g": [], "oracle g, wrong m": [], "both wrong": []}
    ses = {key: [] for key in errors}
    regression_errors = list()
    for replicate in range(replicates):
        dataset = simgen.gen_irm(IrmSimConfig(n=n, seed=derive_seed(seed, replicate)))
        m, g = dataset.oracle["m"], dataset.oracle["g"]
        wrong_m = np.full_like(m, 1.0 / m.shape[1])
        wrong_g = g.copy()
        wrong_g[:, b - 1] += DR_OUTCOME_SHIFT * (1.0 + dataset.X[:, 0])
        for key, nuisances in (("oracle m, wrong g", ArmNuisances(m, wrong_g)),
                               ("oracle g, wrong m", ArmNuisances(wrong_m, g)),
                               ("both wrong", ArmNuisances(wrong_m, wrong_g))):
            report = aipw_ate(nuisances, dataset, b, c)
            errors[key].append(report.estimate() - truth)
            ses[key].append(report.std_error())
        regression_errors.append(regression_ate(ArmNuisances(m, wrong_g), dataset, b, c) - truth)

    results = list()
    for key in errors:
        bias = float(np.mean(errors[key]))
        bound = DR_MULTIPLIER * float(np.mean(ses[key]))
        passed = abs(bias) > bound if key == "both wrong" else abs(bias) < bound
        results.append(CheckResult("double_robustness", key, passed, abs(bias), bound,
                                   "bias must exceed bound" if key == "both wrong" else "bias within bound"))
    bias = float(np.mean(regression_errors))
    bound = DR_MULTIPLIER * float(np.mean(ses["oracle m, wrong g"]))
    results.append(CheckResult("double_robustness", DR_REGRESSION, abs(bias) > bound, abs(bias), bound,
                               "regression contrast must carry the outcome error"))
    return results


def run_checks(suites: Optional[Sequence[str]] = None, seed: int = 0) -> list[CheckResult]:
    results = list()
    for suite in suites or SUITES:
        _logger.info("Running check suite {}".format(suite))
        if suite == "orthogonality":
            results.extend(orthogonality_suite(seed=seed))
        elif suite == "fwl":
            results.extend(fwl_suite(seed=seed))
        elif suite == "identities":
            results.extend(identities_suite(seed=seed))
        elif suite == "double_robustness":
            results.extend(double_robustness_suite(seed=seed))
        else:
            raise ValueError("unknown check suite {}".format(suite))
    for result in results:
        if not result.passed:
            _logger.warning("Check failed: {} / {} (value {:.4g}, bound {:.4g})".format(
                result.suite, result.name, result.value, result.bound))
    return results


def write_checks(results: Sequence[CheckResult], directory: str) -> list[str]:
    """checks.csv with one row per check and checks.json with the pass/fail summary"""
    os.makedirs(directory, exist_ok=True)
    rows = [dataclasses.asdict(result) for result in results]
    table = os.path.join(directory, "checks.csv")
    summary = os.path.join(directory, "checks.json")
    write_table(table, rows, RESULT_COLUMNS)
    write_json(summary, {"passed": all(result.passed for result in results),
                         "n_checks": len(rows), "n_failed": sum(1 for r in results if not r.passed),
                         "results": rows})
    return [table, summary]
