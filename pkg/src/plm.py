import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from crossfit import FoldError, FoldPlan, crossfit_predict, make_folds
from dataset import Dataset
from design import DesignError, EncodedDesign, TreatmentSpec, encode_treatments
from learners import LearnerError, LearnerSet
from report import Z_95, EstimateReport, aggregate_splits
from seeding import derive_seed
from task_runner import SEQUENTIAL, TaskRunner

CONDITION_LIMIT = 1e10
MAX_SPLIT_FAILURE_RATE = 0.10
DEFAULT_T_GRID = (0.05, 0.1)

_logger = logging.getLogger(__name__)


class EstimationError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


@dataclass(frozen=True, eq=False)
class ResidualSet:
    """Cross-fitted residuals of the treatment columns, interaction columns and outcome"""
    eps_A: np.ndarray
    eps_Ao: np.ndarray
    eps_Y: np.ndarray
    names: tuple
    # out-of-fold nuisance predictions: "l" (outcome), "m" (every encoded column)
    predictions: dict = field(default_factory=dict)
    # full residual matrix per categorical treatment, reference level included
    level_residuals: dict = field(default_factory=dict)

    @property
    def E(self) -> np.ndarray:
        return np.hstack([self.eps_A, self.eps_Ao])

    @property
    def n(self) -> int:
        return self.eps_Y.shape[0]


@dataclass(frozen=True, eq=False)
class PlmScoreParts:
    psi_a: np.ndarray
    psi_b: np.ndarray

    @property
    def J0_hat(self) -> np.ndarray:
        return self.psi_a

    def mean_score(self, theta: np.ndarray) -> np.ndarray:
        return self.psi_a @ theta + self.psi_b


def _categorical_residuals(X, treatment, kind, plan, runner) -> np.ndarray:
    """n x (L+1) matrix of indicator minus predicted level probability"""
    indicators = treatment.indicators()
    if kind.is_linear:
        # linear probability fits per kept level; the reference takes up the remainder
        predicted = np.zeros_like(indicators)
        for level in treatment.non_reference_levels():
            predicted[:, level] = crossfit_predict(X, indicators[:, level], kind, plan, runner=runner,
                                                   name="{}[{}]".format(treatment.name, treatment.levels[level]))
        predicted[:, treatment.reference] = 1.0 - predicted.sum(axis=1)
    else:
        predicted = crossfit_predict(X, treatment.values, kind, plan, "multiclass_prob", treatment.n_levels,
                                     runner=runner, name=treatment.name)
    return indicators - predicted


def residualize(dataset: Dataset, design: EncodedDesign, plan: FoldPlan, learner_set: LearnerSet,
                runner: TaskRunner = SEQUENTIAL) -> ResidualSet:
    """Residualize the outcome, every encoded treatment column and every whole interaction column on X"""
    if design.columns.shape[0] != dataset.n:
        raise EstimationError("design has {} rows, dataset {}".format(design.columns.shape[0], dataset.n))
    X = dataset.X
    l_hat = crossfit_predict(X, dataset.Y, learner_set.for_target(dataset.outcome_name, False), plan,
                             runner=runner, name=dataset.outcome_name)

    treatment_residuals = dict()
    level_residuals = dict()
    for name, kind_name, _, _ in design.treatment_kinds:
        treatment = dataset.treatment(name)
        if kind_name == "continuous":
            kind = learner_set.for_target(name, False)
            treatment_residuals[name] = treatment.values - crossfit_predict(
                X, treatment.values, kind, plan, runner=runner, name=name)
        elif kind_name == "binary":
            kind = learner_set.for_target(name, True)
            if kind.is_linear:
                predicted = crossfit_predict(X, treatment.values, kind, plan, runner=runner, name=name)
            else:
                predicted = crossfit_predict(X, treatment.values, kind, plan, "binary_prob", runner=runner,
                                             name=name)
            treatment_residuals[name] = treatment.values - predicted
        else:
            kind = learner_set.for_target(name, True)
            level_residuals[name] = _categorical_residuals(X, treatment, kind, plan, runner)

    main = list()
    interactions = list()
    for j, meta in enumerate(design.column_meta):
        if meta.kind == "interaction":
            kind = learner_set.for_target(meta.name, False)
            column = design.columns[:, j]
            # the product term itself is the regression target
            interactions.append(column - crossfit_predict(X, column, kind, plan, runner=runner, name=meta.name))
        elif meta.kind == "level":
            name, level = meta.factors[0]
            main.append(level_residuals[name][:, level])
        else:
            main.append(treatment_residuals[meta.source])

    n = dataset.n
    eps_A = np.column_stack(main) if main else np.zeros((n, 0))
    eps_Ao = np.column_stack(interactions) if interactions else np.zeros((n, 0))
    eps_Y = dataset.Y - l_hat
    if not (np.all(np.isfinite(eps_A)) and np.all(np.isfinite(eps_Ao)) and np.all(np.isfinite(eps_Y))):
        raise EstimationError("non-finite residuals")
    m_hat = design.columns - np.hstack([eps_A, eps_Ao])
    return ResidualSet(eps_A, eps_Ao, eps_Y, tuple(design.names), {"l": l_hat, "m": m_hat}, level_residuals)


def _collinear_columns(E: np.ndarray, names: Sequence[str]) -> list[str]:
    """Columns loading on the near-null direction of the residual Gram matrix"""
    _, _, Vt = linalg.svd(E, full_matrices=False)
    direction = np.abs(Vt[-1])
    return [names[j] for j in np.nonzero(direction > 0.1 * direction.max())[0]]


def score_parts(res: ResidualSet) -> PlmScoreParts:
    E = res.E
    return PlmScoreParts(-(E.T @ E) / res.n, E.T @ res.eps_Y / res.n)


def residual_condition_number(res: ResidualSet) -> float:
    singular = linalg.svd(res.E, compute_uv=False)
    if singular.size == 0 or singular[-1] == 0.0:
        return np.inf
    return float((singular[0] / singular[-1]) ** 2)


def solve_residual_regression(res: ResidualSet) -> np.ndarray:
    """Least squares of eps_Y on the stacked residuals, no intercept, via QR"""
    E = res.E
    if E.shape[1] == 0:
        raise EstimationError("no treatment columns to estimate")
    if E.shape[0] <= E.shape[1]:
        raise EstimationError("{} rows for {} coefficients".format(E.shape[0], E.shape[1]))
    condition = residual_condition_number(res)
    if not condition <= CONDITION_LIMIT:
        raise EstimationError("residual Gram matrix is ill-conditioned (condition {:.3g}); collinear columns: {}"
                              .format(condition, ", ".join(_collinear_columns(E, res.names))))
    Q, R = linalg.qr(E, mode="economic")
    return linalg.solve_triangular(R, Q.T @ res.eps_Y)


def score_residual_norm(res: ResidualSet, theta: np.ndarray) -> float:
    return float(np.max(np.abs(score_parts(res).mean_score(theta))))


def plm_variance(res: ResidualSet, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sandwich covariance J^-1 mean(psi psi^T) J^-T with psi = E * (eps_Y - E theta); returns (sigma, se)"""
    E = res.E
    n = res.n
    psi = E * (res.eps_Y - E @ theta)[:, None]
    J = score_parts(res).J0_hat
    omega = psi.T @ psi / n
    try:
        left = linalg.solve(J, omega, assume_a="sym")
        sigma = linalg.solve(J, left.T, assume_a="sym").T
    except linalg.LinAlgError as e:
        raise EstimationError("singular score Jacobian: {}".format(e))
    sigma = 0.5 * (sigma + sigma.T)
    se = np.sqrt(np.maximum(np.diag(sigma), 0.0) / n)
    return sigma, se


def _stratify_labels(dataset: Dataset, stratify_on: Optional[str]) -> Optional[np.ndarray]:
    if stratify_on is None:
        return None
    treatment = dataset.treatment(stratify_on)
    if treatment.kind == "continuous":
        raise DesignError("cannot stratify folds on continuous treatment {}".format(stratify_on))
    return np.asarray(treatment.values, dtype=int)


def prepare_design(dataset: Dataset, spec: TreatmentSpec) -> EncodedDesign:
    design = encode_treatments(dataset, spec)
    constant = design.constant_columns()
    if constant:
        raise DesignError("design column(s) constant in sample: {}".format(", ".join(constant)))
    if dataset.n <= design.columns.shape[1]:
        raise DesignError("{} rows for {} design columns".format(dataset.n, design.columns.shape[1]))
    return design


def estimate_plm(dataset: Dataset, spec: TreatmentSpec, K: int, learner_set: LearnerSet, seed: int,
                 stratify_on: Optional[str] = None, runner: TaskRunner = SEQUENTIAL,
                 design: Optional[EncodedDesign] = None) -> EstimateReport:
    """Cross-fitted partial linear model for several treatments and their interactions"""
    if design is None:
        design = prepare_design(dataset, spec)
    plan = make_folds(dataset.n, K, seed, _stratify_labels(dataset, stratify_on))
    res = residualize(dataset, design, plan, learner_set, runner)
    theta = solve_residual_regression(res)
    sigma, _ = plm_variance(res, theta)
    norm = score_residual_norm(res, theta)
    _logger.debug("PLM seed {}: theta {}".format(seed, np.array2string(theta, precision=4)))
    return EstimateReport.from_sigma(
        "plm", design.names, theta, sigma, dataset.n, K, learner_ids=learner_set.ids(),
        score_residual_norm=norm,
        diagnostics={"seed": seed, "fold_sizes": plan.fold_sizes(),
                     "condition_number": residual_condition_number(res),
                     "residual_sd_Y": float(np.std(res.eps_Y))})


def split_seeds(base_seed: int, n_splits: int) -> list[int]:
    """Split 0 runs on the base seed so a single split reproduces the plain estimate"""
    return [base_seed] + [derive_seed(base_seed, s) for s in range(1, n_splits)]


def run_splits(estimate: Callable[[int], EstimateReport], n_splits: int, base_seed: int,
               runner: TaskRunner = SEQUENTIAL) -> EstimateReport:
    """Run one estimate per split seed, drop failed splits, median-aggregate the rest"""
    if n_splits < 1:
        raise EstimationError("n_splits must be at least 1")

    def one_split(seed: int):
        try:
            return estimate(seed), None
        except (LearnerError, FoldError, EstimationError) as e:
            return None, {"seed": seed, "error": type(e).__name__, "detail": str(e)}

    outcomes = runner.map(one_split, split_seeds(base_seed, n_splits))
    reports = [report for report, failure in outcomes if failure is None]
    failures = [failure for _, failure in outcomes if failure is not None]
    for failure in failures:
        _logger.warning("Split with seed {} failed: {}: {}".format(failure["seed"], failure["error"],
                                                                  failure["detail"]))
    if not reports or len(failures) > MAX_SPLIT_FAILURE_RATE * n_splits:
        raise EstimationError("{} of {} splits failed; first: {}".format(
            len(failures), n_splits, failures[0]["detail"]))
    return aggregate_splits(reports, failures)


def repeat_splits(dataset: Dataset, spec: TreatmentSpec, K: int, learner_set: LearnerSet, n_splits: int,
                  base_seed: int, stratify_on: Optional[str] = None,
                  runner: TaskRunner = SEQUENTIAL) -> EstimateReport:
    """Median estimate and median SE over n_splits re-seeded fold plans and learners"""
    design = prepare_design(dataset, spec)
    inner = runner.inner() if n_splits > 1 else runner
    return run_splits(lambda seed: estimate_plm(dataset, spec, K, learner_set, seed, stratify_on, inner, design),
                      n_splits, base_seed, runner if n_splits > 1 else SEQUENTIAL)


def plm_score(A: np.ndarray, Y: np.ndarray, theta: np.ndarray, nuisances: dict) -> np.ndarray:
    """Orthogonal per-row score (A - m) * (Y - l - (A - m) theta); nuisances 'm' (n x k) and 'l' (n)"""
    eps_A = A - nuisances["m"]
    return eps_A * (Y - nuisances["l"] - eps_A @ theta)[:, None]


def naive_plm_score(A: np.ndarray, Y: np.ndarray, theta: np.ndarray, nuisances: dict) -> np.ndarray:
    """Non-orthogonal moment A * (Y - A theta - g) with g = l - m theta"""
    g = nuisances["l"] - nuisances["m"] @ theta
    return A * (Y - A @ theta - g)[:, None]


@dataclass(frozen=True)
class OrthogonalityResult:
    derivative: np.ndarray
    se: np.ndarray
    n: int

    @property
    def studentized(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(self.derivative) / self.se
        return np.where(self.derivative == 0.0, 0.0, ratio)

    def max_studentized(self) -> float:
        return float(np.max(self.studentized)) if self.studentized.size else 0.0

    def max_root_n(self) -> float:
        """Largest |derivative| scaled by sqrt(n), the unstudentized reading of the bound"""
        return float(np.max(np.abs(self.derivative)) * np.sqrt(self.n)) if self.derivative.size else 0.0

    def holds(self, multiplier: float = 5.0) -> bool:
        return bool(np.all(np.abs(self.derivative) <= multiplier * self.se))


def check_orthogonality(score: Callable, theta: np.ndarray, nuisances: dict, direction: dict,
                        t_grid: Sequence[float] = DEFAULT_T_GRID) -> OrthogonalityResult:
    """Central finite-difference derivative of the mean score along nuisances + t * direction.

    The per-row differences also give a standard error for the derivative.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))

    def evaluate(t: float) -> np.ndarray:
        shifted = {key: value + t * direction[key] if key in direction else value
                   for key, value in nuisances.items()}
        values = score(theta, shifted)
        return values[:, None] if values.ndim == 1 else values

    per_row = np.mean([(evaluate(t) - evaluate(-t)) / (2.0 * t) for t in t_grid], axis=0)
    n = per_row.shape[0]
    return OrthogonalityResult(per_row.mean(axis=0), per_row.std(axis=0, ddof=1) / np.sqrt(n), n)


def effect_differences(report: EstimateReport, design: EncodedDesign,
                       assignments: Sequence[dict]) -> list[dict]:
    """Effect of each treatment assignment against the all-reference combination.

    Split-aggregated reports take medians of the per-split contrasts and SEs.
    """
    reports = report.splits if report.splits else (report,)
    rows = list()
    for assignment in assignments:
        c = design.contrast_vector(assignment)
        estimates = [float(c @ r.theta) for r in reports]
        errors = [float(np.sqrt(max(c @ r.sigma @ c, 0.0) / r.n_obs)) for r in reports]
        estimate = float(np.median(estimates))
        se = float(np.median(errors))
        row = {name: value for name, value in assignment.items()}
        row.update({"estimate": estimate, "se": se, "ci95_low": estimate - Z_95 * se,
                    "ci95_high": estimate + Z_95 * se})
        rows.append(row)
    return rows
