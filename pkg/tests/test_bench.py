import json
import math
import os

import numpy as np
import pandas as pd
import pytest

import bench
from bench import BenchError, BenchRecord
from config import ConfigError
from irm import ArmLearners
from learners import LearnerKind, LearnerSet
from simgen import IrmSimConfig, PlmSimConfig
from task_runner import TaskRunner

OLS = LearnerSet.single(LearnerKind("ols"))
BOOSTED = LearnerSet.single(LearnerKind.from_config("boosted_trees"))
FOREST = LearnerSet.single(LearnerKind.from_config("random_forest"))
PARALLEL = TaskRunner(os.cpu_count() or 1)


def test_summary_statistics():
    record = BenchRecord.summarise("dml_plm", "ols", 2, "A1", 2.0, [1.0, 2.0, 3.0], [1.0, 1.0, 1.0], 0,
                                   "replicates")
    assert record.bias == 0.0
    assert record.rmse == pytest.approx(math.sqrt(2.0 / 3.0))
    assert record.emp_sd == pytest.approx(1.0)
    assert record.se_sd_ratio == pytest.approx(1.0)
    assert record.coverage95 == 1.0
    assert record.relative_bias == 0.0


def test_summary_without_standard_errors():
    record = BenchRecord.summarise("ipw", "ols/ols", 5, "ATE[2-1]", 5.0, [4.0, 6.0], [np.nan, np.nan], 0,
                                   "replicates")
    assert math.isnan(record.mean_se)
    assert math.isnan(record.coverage95)


def test_plm_bench_records():
    result = bench.run_plm_bench(PlmSimConfig(n=200, preset="linear"), [OLS], [2], 3, master_seed=1)
    assert len(result.records) == 3
    assert len(result.plot_data) == 9
    record = result.record("dml_plm", "A2", "ols", 2)
    assert record.n_replicates == 3
    assert record.n_failed == 0
    assert record.truth == 15.0
    assert result.metadata["truths"] == {"A1": 5.0, "A2": 15.0, "A1:A2": 5.0}


def test_plm_bench_is_reproducible():
    config = PlmSimConfig(n=150, preset="linear")
    first = bench.run_plm_bench(config, [OLS], [2], 2, master_seed=3)
    second = bench.run_plm_bench(config, [OLS], [2], 2, master_seed=3)
    assert [row["estimate"] for row in first.plot_data] == [row["estimate"] for row in second.plot_data]


def test_single_dataset_mode():
    result = bench.run_plm_bench(PlmSimConfig(n=200, preset="linear"), [OLS], [2], 4, mode="single-dataset")
    assert result.record("dml_plm", "A1").n_replicates == 4
    assert result.metadata["mode"] == "single-dataset"


def test_failing_cells_raise():
    with pytest.raises(BenchError):
        bench.run_plm_bench(PlmSimConfig(n=60, preset="linear"), [OLS], [100], 2)


def test_invalid_arguments():
    with pytest.raises(ConfigError):
        bench.run_plm_bench(PlmSimConfig(n=100), [OLS], [2], 1, mode="bootstrap")
    with pytest.raises(ConfigError):
        bench.run_irm_bench(IrmSimConfig(n=100), methods=("matching",), n_replicates=1)


def test_irm_bench_records():
    learners = [ArmLearners(LearnerKind("multinomial_softmax"), LearnerKind("ols"))]
    result = bench.run_irm_bench(IrmSimConfig(n=400), bench.IRM_METHODS, learners, (2,), 2, master_seed=0)
    assert len(result.records) == 4 * 3
    aipw = result.record("dml_aipw", "ATE[3-1]")
    assert aipw.truth == pytest.approx(10.5)
    assert np.isfinite(aipw.mean_se)
    assert math.isnan(result.record("ipw", "ATE[3-1]").coverage95)


def test_write_bench(tmp_path):
    result = bench.run_plm_bench(PlmSimConfig(n=200, preset="linear"), [OLS], [2], 2)
    paths = bench.write_bench(result, str(tmp_path / "bench"), {"mode": "bench-plm"})
    records = pd.read_csv(paths[0])
    assert list(records.columns) == list(bench.RECORD_COLUMNS)
    assert len(records) == 3
    assert list(pd.read_csv(paths[1]).columns) == list(bench.VARIANCE_COLUMNS)
    assert len(pd.read_csv(paths[2])) == 6
    with open(paths[3]) as json_file:
        metadata = json.load(json_file)
    assert metadata["config"] == {"mode": "bench-plm"}
    assert metadata["n_replicates"] == 2


@pytest.mark.slow
def test_plm_ols_coverage_on_linear_design():
    result = bench.run_plm_bench(PlmSimConfig(n=2000, preset="linear"), [OLS], [5], 200)
    for target in bench.PLM_TARGETS:
        record = result.record("dml_plm", target)
        assert 0.90 <= record.coverage95 <= 0.99
        assert abs(record.relative_bias) < 0.01
        assert 0.8 <= record.se_sd_ratio <= 1.25



def test_records_table_is_reproducible(tmp_path):
    config = PlmSimConfig(n=150, preset="linear")
    first = bench.write_bench(bench.run_plm_bench(config, [OLS], [2], 2, master_seed=3), str(tmp_path / "a"))
    second = bench.write_bench(bench.run_plm_bench(config, [OLS], [2], 2, master_seed=3), str(tmp_path / "b"))
    for left, right in zip(first[:3], second[:3]):
        with open(left, "rb") as a, open(right, "rb") as b:
            assert a.read() == b.read()
    with open(first[3]) as json_file:
        assert set(json.load(json_file)["wall_time"]) == {"ols K=2"}


@pytest.mark.slow
def test_plm_null_preset_coverage():
    result = bench.run_plm_bench(PlmSimConfig(n=2000, preset="null"), [OLS], [5], 200, runner=PARALLEL)
    for target in bench.PLM_TARGETS:
        assert 0.90 <= result.record("dml_plm", target).coverage95 <= 0.98


@pytest.mark.slow
def test_plm_boosting_recovers_effects():
    result = bench.run_plm_bench(PlmSimConfig(n=2000), [BOOSTED], [5], 100, n_splits=50, runner=PARALLEL)
    for target in bench.PLM_TARGETS:
        assert abs(result.record("dml_plm", target).bias) <= 0.3


@pytest.mark.slow
def test_tree_learners_beat_ols_on_interaction():
    result = bench.run_plm_bench(PlmSimConfig(n=2000), [OLS, FOREST, BOOSTED], [5], 100, runner=PARALLEL)
    ols_bias = abs(result.record("dml_plm", "A1:A2", OLS.regression.learner_id).bias)
    for learner in (FOREST, BOOSTED):
        assert abs(result.record("dml_plm", "A1:A2", learner.regression.learner_id).bias) < ols_bias


@pytest.mark.slow
def test_plm_boosting_standard_errors_match_spread():
    result = bench.run_plm_bench(PlmSimConfig(n=2000), [BOOSTED], [5], 200, runner=PARALLEL)
    for target in bench.PLM_TARGETS:
        assert 0.75 <= result.record("dml_plm", target).se_sd_ratio <= 1.25


@pytest.mark.slow
def test_irm_aipw_relative_bias_and_linear_ipw():
    boosted, linear = bench.default_irm_learners()
    result = bench.run_irm_bench(IrmSimConfig(n=1000), ("dml_aipw", "ipw"), [boosted, linear], (5,), 200,
                                 runner=PARALLEL)
    worse = 0
    for target in ("ATE[2-1]", "ATE[3-1]", "ATE[3-2]"):
        aipw = result.record("dml_aipw", target, boosted.label)
        assert abs(aipw.median_relative_bias) <= 0.05
        assert 0.75 <= aipw.se_sd_ratio <= 1.25
        ipw = result.record("ipw", target, linear.label)
        worse += abs(ipw.median_relative_bias) > abs(aipw.median_relative_bias)
    assert worse >= 2
