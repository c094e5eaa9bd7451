import numpy as np
import pytest

import simgen
from config import Config
from dataset import DatasetError, read_csv, write_dataset_csv
from design import encode_treatments
from simgen import CohortSimConfig, IrmSimConfig, PlmSimConfig


def test_plm_reproducible():
    first = simgen.gen_plm(PlmSimConfig(n=200, seed=4))
    second = simgen.gen_plm(PlmSimConfig(n=200, seed=4))
    other = simgen.gen_plm(PlmSimConfig(n=200, seed=5))
    assert np.array_equal(first.Y, second.Y)
    assert not np.array_equal(first.Y, other.Y)


def test_larger_sample_extends_smaller():
    small = simgen.gen_plm(PlmSimConfig(n=100, seed=4))
    large = simgen.gen_plm(PlmSimConfig(n=200, seed=4))
    assert np.array_equal(small.X, large.X[:100])
    assert np.array_equal(small.Y, large.Y[:100])


def test_plm_effects_recovered_with_oracle_g():
    dataset = simgen.gen_plm(PlmSimConfig(n=5000, seed=0))
    A = encode_treatments(dataset, simgen.plm_treatment_spec()).columns
    theta = np.linalg.lstsq(A, dataset.Y - dataset.oracle["g"], rcond=None)[0]
    assert np.allclose(theta, [5.0, 15.0, 5.0], atol=0.2)


def test_oracle_outcome_regression():
    dataset = simgen.gen_plm(PlmSimConfig(n=20000, seed=1))
    residual = dataset.Y - dataset.oracle["l"]
    assert abs(residual.mean()) < 4.0 * residual.std() / np.sqrt(dataset.n)


@pytest.mark.parametrize("preset", ["mixed", "linear"])
def test_analytic_mean_g(preset):
    X = simgen._covariates(simgen._streams(3), 200000)
    _, _, g = simgen.plm_nuisance_forms(X, preset)
    assert g.mean() == pytest.approx(simgen.analytic_mean_g(preset), abs=0.03)


def test_null_preset():
    dataset = simgen.gen_plm(PlmSimConfig(n=100, preset="null"))
    assert np.all(dataset.oracle["pi"] == 0.5)
    assert np.all(dataset.oracle["g"] == 0.0)


@pytest.mark.parametrize("config", [
    dict(n=10), dict(preset="quadratic"), dict(theta_true=(1.0, 2.0)),
])
def test_plm_config_validation(config):
    with pytest.raises(DatasetError):
        PlmSimConfig(**config)


def test_irm_structure():
    dataset = simgen.gen_irm(IrmSimConfig(n=3000, seed=0))
    assert dataset.n_regimens == 3
    assert set(np.unique(dataset.regimen)) == {1, 2, 3}
    assert np.allclose(dataset.oracle["m"].sum(axis=1), 1.0)
    assert np.all(dataset.oracle["tau21"] == 5.0)
    assert dataset.oracle["tau31"].mean() == pytest.approx(simgen.true_ates()[(3, 1)], abs=1.0)


def test_symmetric_preset_has_equal_propensities():
    dataset = simgen.gen_irm(IrmSimConfig(n=100, preset="symmetric"))
    assert np.allclose(dataset.oracle["m"], 1.0 / 3.0)


def test_true_ates():
    truths = simgen.true_ates()
    assert truths[(2, 1)] == 5.0
    assert truths[(3, 1)] == pytest.approx(10.5)
    assert truths[(3, 2)] == pytest.approx(5.5)


def test_irm_config_validation():
    with pytest.raises(DatasetError):
        IrmSimConfig(D=4)


def test_cohort_shape():
    dataset = simgen.gen_cohort(CohortSimConfig(seed=0))
    assert dataset.n == 2455
    assert dataset.p == 19
    assert dataset.covariate_names[0] == "x01"
    assert dataset.treatment("ART").levels == ("NNRTI", "bPI", "DTG")
    assert np.allclose(dataset.oracle["p_art"].sum(axis=1), 1.0)
    design = encode_treatments(dataset, simgen.cohort_treatment_spec())
    assert design.names == ["ART[bPI]", "ART[DTG]", "TDF", "HTN", "ART[bPI]:TDF", "ART[DTG]:TDF"]


def test_simulation_config_reads_back(tmp_path):
    dataset = simgen.gen_cohort(CohortSimConfig(n=300, seed=2))
    path = str(tmp_path / "cohort.csv")
    write_dataset_csv(dataset, path)
    config = Config(config=simgen.simulation_config(dataset, simgen.cohort_treatment_spec()))
    assert config.validate()
    assert config.interactions_config() == [["ART", "TDF"]]
    reread = read_csv(path, config)
    assert np.array_equal(reread.Y, dataset.Y)
    assert reread.covariate_names == dataset.covariate_names
