import numpy as np
import pytest

import plm
from crossfit import FoldPlan, crossfit_predict, make_folds
from checks import full_ols_coefficients
from dataset import Dataset, InteractionSpec, TreatmentColumn
from design import DesignError, TreatmentSpec, encode_treatments, enumerate_assignments
from learners import LearnerError, LearnerKind, LearnerSet
from plm import EstimationError, check_orthogonality, estimate_plm, repeat_splits, run_splits
from report import EstimateReport
from task_runner import TaskRunner

LINEAR_SPEC = TreatmentSpec(("A1", "A2"), (InteractionSpec(("A1", "A2")),))


def test_full_sample_ols_matches_long_regression(linear_dataset, ols_learners):
    report = estimate_plm(linear_dataset, LINEAR_SPEC, 1, ols_learners, 0)
    expected = full_ols_coefficients(linear_dataset, encode_treatments(linear_dataset, LINEAR_SPEC).columns)
    assert np.allclose(report.theta, expected, rtol=1e-8, atol=1e-10)
    assert report.names == ("A1", "A2", "A1:A2")


def test_crossfit_recovers_coefficients(linear_dataset, ols_learners):
    report = estimate_plm(linear_dataset, LINEAR_SPEC, 5, ols_learners, 0)
    truth = np.array([2.0, -1.0, 0.5])
    assert np.all(np.abs(report.theta - truth) < 4.0 * report.se)
    assert report.score_residual_norm < 1e-10
    assert report.n_folds == 5
    assert report.diagnostics["fold_sizes"] == [100] * 5


def test_seed_reproducible(linear_dataset, ols_learners):
    first = estimate_plm(linear_dataset, LINEAR_SPEC, 2, ols_learners, 3)
    second = estimate_plm(linear_dataset, LINEAR_SPEC, 2, ols_learners, 3, runner=TaskRunner(2))
    assert np.array_equal(first.theta, second.theta)
    assert np.array_equal(first.se, second.se)


def test_categorical_treatment(categorical_dataset, ols_learners):
    report = estimate_plm(categorical_dataset, TreatmentSpec(("ART", "TDF")), 5, ols_learners, 0)
    assert report.names == ("ART[bPI]", "ART[DTG]", "TDF")
    truth = np.array([-2.0, -4.0, 1.0])
    assert np.all(np.abs(report.theta - truth) < 4.0 * report.se)


def test_categorical_residual_rows_sum_to_zero(categorical_dataset, ols_learners):
    design = encode_treatments(categorical_dataset, TreatmentSpec(("ART", "TDF")))
    plan = make_folds(categorical_dataset.n, 3, 0)
    residuals = plm.residualize(categorical_dataset, design, plan, ols_learners)
    assert np.max(np.abs(residuals.level_residuals["ART"].sum(axis=1))) < 1e-9


def test_collinear_treatments_named(rng, ols_learners):
    X = rng.standard_normal((200, 3))
    A = X[:, 0] + rng.standard_normal(200)
    dataset = Dataset(X, A + rng.standard_normal(200),
                      (TreatmentColumn("A2", "continuous", A), TreatmentColumn("A3", "continuous", 2.0 * A)))
    with pytest.raises(EstimationError) as error:
        estimate_plm(dataset, TreatmentSpec(("A2", "A3")), 2, ols_learners, 0)
    assert "A2" in str(error.value)
    assert "A3" in str(error.value)


def test_constant_treatment_rejected(rng, ols_learners):
    X = rng.standard_normal((50, 2))
    dataset = Dataset(X, rng.standard_normal(50), (TreatmentColumn("A1", "binary", np.ones(50)),))
    with pytest.raises(DesignError):
        estimate_plm(dataset, TreatmentSpec(("A1",)), 2, ols_learners, 0)


def test_stratify_on_continuous_rejected(linear_dataset, ols_learners):
    with pytest.raises(DesignError):
        estimate_plm(linear_dataset, LINEAR_SPEC, 2, ols_learners, 0, stratify_on="A2")


def test_stratified_folds(linear_dataset, ols_learners):
    report = estimate_plm(linear_dataset, LINEAR_SPEC, 2, ols_learners, 0, stratify_on="A1")
    assert np.all(np.isfinite(report.theta))


def test_single_split_equals_plain_estimate(linear_dataset, ols_learners):
    single = repeat_splits(linear_dataset, LINEAR_SPEC, 2, ols_learners, 1, 5)
    plain = estimate_plm(linear_dataset, LINEAR_SPEC, 2, ols_learners, 5)
    assert np.array_equal(single.theta, plain.theta)
    assert np.array_equal(single.se, plain.se)


def test_repeated_splits_take_medians(linear_dataset, ols_learners):
    report = repeat_splits(linear_dataset, LINEAR_SPEC, 2, ols_learners, 5, 0)
    assert report.n_splits == 5
    assert len(report.splits) == 5
    thetas = np.vstack([r.theta for r in report.splits])
    assert np.array_equal(report.theta, np.median(thetas, axis=0))
    assert report.splits[0].diagnostics["seed"] == 0


def _fake_estimate(failing):
    def estimate(seed):
        if seed in failing:
            raise LearnerError("learner failed on seed {}".format(seed))
        return EstimateReport.from_sigma("plm", ["a"], [float(seed % 7)], [[1.0]], 10, 2,
                                         diagnostics={"seed": seed})
    return estimate


def test_failed_splits_recorded():
    seeds = plm.split_seeds(0, 20)
    report = run_splits(_fake_estimate({seeds[3], seeds[7]}), 20, 0)
    assert report.n_splits == 20
    assert len(report.splits) == 18
    assert [failure["seed"] for failure in report.failed_splits] == [seeds[3], seeds[7]]
    assert report.failed_splits[0]["error"] == "LearnerError"


def test_too_many_failed_splits():
    seeds = plm.split_seeds(0, 20)
    with pytest.raises(EstimationError):
        run_splits(_fake_estimate(set(seeds[:3])), 20, 0)


def test_split_seeds():
    seeds = plm.split_seeds(11, 4)
    assert seeds[0] == 11
    assert len(set(seeds)) == 4


def _orthogonality_setup(rng, n=20000):
    X = rng.standard_normal(n)
    A = 1.0 + X + rng.standard_normal(n)
    Y = 2.0 * A + X ** 2 + rng.standard_normal(n)
    nuisances = {"m": (1.0 + X)[:, None], "l": 2.0 * (1.0 + X) + X ** 2}
    return A[:, None], Y, nuisances


def test_orthogonal_score_insensitive(rng):
    A, Y, nuisances = _orthogonality_setup(rng)
    direction = {"m": np.ones_like(nuisances["m"])}
    result = check_orthogonality(lambda t, nu: plm.plm_score(A, Y, t, nu), np.array([2.0]), nuisances, direction)
    assert result.holds(5.0)
    naive = check_orthogonality(lambda t, nu: plm.naive_plm_score(A, Y, t, nu), np.array([2.0]), nuisances,
                                direction)
    assert naive.max_studentized() > 50.0


def test_zero_direction_has_zero_derivative(rng):
    A, Y, nuisances = _orthogonality_setup(rng, 100)
    direction = {"m": np.zeros_like(nuisances["m"])}
    result = check_orthogonality(lambda t, nu: plm.plm_score(A, Y, t, nu), np.array([2.0]), nuisances, direction)
    assert result.derivative.tolist() == [0.0]
    assert result.max_studentized() == 0.0


def test_effect_differences(categorical_dataset, ols_learners):
    spec = TreatmentSpec(("ART", "TDF"), (InteractionSpec(("ART", "TDF")),))
    report = estimate_plm(categorical_dataset, spec, 2, ols_learners, 0)
    design = encode_treatments(categorical_dataset, spec)
    rows = plm.effect_differences(report, design, enumerate_assignments(design))
    assert rows[0]["ART"] == "NNRTI"
    assert rows[0]["estimate"] == 0.0
    assert rows[0]["se"] == 0.0
    both = next(row for row in rows if row["ART"] == "DTG" and row["TDF"] == 1)
    theta = dict(zip(report.names, report.theta))
    assert both["estimate"] == pytest.approx(theta["ART[DTG]"] + theta["TDF"] + theta["ART[DTG]:TDF"])


def _residual_set(E, eps_Y, names=("A",)):
    return plm.ResidualSet(E, np.zeros((E.shape[0], 0)), eps_Y, tuple(names))


def test_residual_regression_matches_least_squares(rng):
    E = rng.standard_normal((200, 3))
    eps_Y = E @ np.array([1.0, -0.5, 2.0]) + rng.standard_normal(200)
    theta = plm.solve_residual_regression(_residual_set(E, eps_Y, ("a", "b", "c")))
    expected = np.linalg.lstsq(E, eps_Y, rcond=None)[0]
    assert np.allclose(theta, expected, rtol=1e-10, atol=1e-12)


def test_residual_regression_needs_more_rows_than_columns(rng):
    with pytest.raises(EstimationError):
        plm.solve_residual_regression(_residual_set(rng.standard_normal((2, 2)), np.zeros(2), ("a", "b")))


def test_sandwich_variance_single_column(rng):
    e = rng.standard_normal(300)
    u = rng.standard_normal(300) * (1.0 + np.abs(e))
    res = _residual_set(e[:, None], 0.7 * e + u)
    theta = plm.solve_residual_regression(res)
    sigma, se = plm.plm_variance(res, theta)
    r = res.eps_Y - e * theta[0]
    expected = np.mean(e ** 2 * r ** 2) / np.mean(e ** 2) ** 2
    assert sigma[0, 0] == pytest.approx(expected, rel=1e-10)
    assert se[0] == pytest.approx(np.sqrt(expected / 300), rel=1e-10)


def test_interaction_residual_is_not_product_of_residuals(linear_dataset, ols_learners):
    design = encode_treatments(linear_dataset, LINEAR_SPEC)
    plan = make_folds(linear_dataset.n, 5, 0)
    res = plm.residualize(linear_dataset, design, plan, ols_learners)
    product = res.eps_A[:, 0] * res.eps_A[:, 1]
    assert np.max(np.abs(res.eps_Ao[:, 0] - product)) > 0.1
    column = linear_dataset.treatment("A1").values * linear_dataset.treatment("A2").values
    expected = column - crossfit_predict(linear_dataset.X, column, LearnerKind("ols"), plan)
    assert np.allclose(res.eps_Ao[:, 0], expected, atol=1e-12)


@pytest.mark.parametrize("kind", [LearnerKind("ols"), LearnerKind("random_forest", n_trees=10, max_depth=4)])
def test_row_order_does_not_change_estimate(linear_dataset, rng, kind):
    design = encode_treatments(linear_dataset, LINEAR_SPEC)
    plan = make_folds(linear_dataset.n, 4, 3)
    learner_set = LearnerSet.single(kind)
    theta = plm.solve_residual_regression(plm.residualize(linear_dataset, design, plan, learner_set))

    perm = rng.permutation(linear_dataset.n)
    permuted = linear_dataset.take(perm)
    permuted_plan = FoldPlan(plan.K, plan.assignments[perm], plan.seed)
    permuted_design = encode_treatments(permuted, LINEAR_SPEC)
    permuted_theta = plm.solve_residual_regression(
        plm.residualize(permuted, permuted_design, permuted_plan, learner_set))
    assert np.allclose(theta, permuted_theta, rtol=1e-10, atol=1e-10)


def test_score_parts_vanish_at_solution(rng):
    E = rng.standard_normal((150, 2))
    res = _residual_set(E, E @ np.array([0.5, -1.0]) + rng.standard_normal(150), ("a", "b"))
    parts = plm.score_parts(res)
    assert np.allclose(parts.J0_hat, -(E.T @ E) / 150)
    theta = plm.solve_residual_regression(res)
    assert np.max(np.abs(parts.mean_score(theta))) < 1e-12
    assert plm.score_residual_norm(res, theta) == pytest.approx(np.max(np.abs(parts.mean_score(theta))))
