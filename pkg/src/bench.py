import dataclasses
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

import simgen
from config import ConfigError
from crossfit import FoldError, make_folds
from irm import ArmLearners, aipw_contrasts, fit_arm_nuisances
from learners import LearnerError, LearnerKind, LearnerSet
from plm import EstimationError, repeat_splits
from report import REPORT_SCHEMA_VERSION, Z_95, write_json, write_table
from seeding import derive_seed
from simgen import IrmSimConfig, PlmSimConfig
from task_runner import SEQUENTIAL, TaskRunner

MAX_REPLICATE_FAILURE_RATE = 0.05
BENCH_SCHEMA_VERSION = REPORT_SCHEMA_VERSION
PLM_TARGETS = ("A1", "A2", "A1:A2")
IRM_METHODS = ("dml_aipw", "ipw", "ipw_hajek", "regression")
BENCH_MODES = ("replicates", "single-dataset")

RECORD_COLUMNS = ("estimator", "learner", "K", "target", "truth", "n_replicates", "n_failed", "bias", "rmse",
                  "relative_bias", "median_relative_bias", "emp_sd", "mean_se", "se_sd_ratio", "coverage95",
                  "mode")
VARIANCE_COLUMNS = ("estimator", "learner", "K", "target", "emp_sd", "mean_se", "se_sd_ratio", "coverage95")
PLOT_COLUMNS = ("method", "learner", "K", "contrast", "replicate", "estimate", "se", "relative_bias")

_logger = logging.getLogger(__name__)


class BenchError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


@dataclass(frozen=True)
class BenchRecord:
    estimator: str
    learner: str
    K: int
    target: str
    truth: float
    n_replicates: int
    n_failed: int
    bias: float
    rmse: float
    relative_bias: float
    median_relative_bias: float
    emp_sd: float
    mean_se: float
    se_sd_ratio: float
    coverage95: float
    mode: str = "replicates"

    @staticmethod
    def summarise(estimator: str, learner: str, K: int, target: str, truth: float, estimates: Sequence[float],
                  errors: Sequence[float], n_failed: int, mode: str) -> "BenchRecord":
        """Statistics of the replicate estimates; SEs may be NaN for estimators without one"""
        estimates = np.asarray(estimates, dtype=float)
        se = np.asarray(errors, dtype=float)
        deviation = estimates - truth
        bias = float(np.mean(deviation))
        rmse = float(np.sqrt(np.mean(deviation ** 2)))
        emp_sd = float(np.std(estimates, ddof=1)) if estimates.size > 1 else 0.0
        has_se = se.size > 0 and np.all(np.isfinite(se))
        mean_se = float(np.mean(se)) if has_se else float("nan")
        coverage = float(np.mean(np.abs(deviation) <= Z_95 * se)) if has_se else float("nan")
        ratio = mean_se / emp_sd if has_se and emp_sd > 0 else float("nan")
        if truth != 0.0:
            relative = deviation / truth
            relative_bias, median_relative = float(np.mean(relative)), float(np.median(relative))
        else:
            relative_bias = median_relative = float("nan")
        return BenchRecord(estimator, learner, K, target, truth, int(estimates.size), n_failed, bias, rmse,
                           relative_bias, median_relative, emp_sd, mean_se, ratio, coverage, mode)


@dataclass(frozen=True)
class BenchResult:
    records: tuple
    plot_data: tuple
    metadata: dict = field(default_factory=dict)

    def record(self, estimator: str, target: str, learner: Optional[str] = None,
               K: Optional[int] = None) -> BenchRecord:
        for record in self.records:
            if record.estimator == estimator and record.target == target \
                    and (learner is None or record.learner == learner) and (K is None or record.K == K):
                return record
        raise KeyError("no record for {} {} {} {}".format(estimator, target, learner, K))


def _learner_label(learner) -> str:
    if isinstance(learner, LearnerSet):
        if learner.regression == learner.classification and not learner.overrides:
            return learner.regression.learner_id
        return "{}/{}".format(learner.regression.learner_id, learner.classification.learner_id)
    return learner.label


def _check_failures(failures: dict, n_replicates: int) -> None:
    for key, count in failures.items():
        if count > MAX_REPLICATE_FAILURE_RATE * n_replicates:
            raise BenchError("{} of {} replicates failed for {}".format(count, n_replicates, key))
        if count:
            _logger.warning("{} replicate(s) failed for {}".format(count, key))


def _replicate_config(config, master_seed: int, replicate: int):
    return dataclasses.replace(config, seed=derive_seed(master_seed, replicate))


def run_plm_bench(config: PlmSimConfig, learner_list: Sequence[LearnerSet], K_list: Sequence[int],
                  n_replicates: int, n_splits: int = 1, master_seed: int = 0, mode: str = "replicates",
                  runner: TaskRunner = SEQUENTIAL) -> BenchResult:
    """Replicated PLM estimates scored against the true effects.

    In "single-dataset" mode one dataset (config.seed) is split n_replicates times and the
    statistics describe the per-split spread.
    """
    if mode not in BENCH_MODES:
        raise ConfigError("unknown bench mode {}".format(mode))
    if n_replicates < 1:
        raise ConfigError("n_replicates must be at least 1")
    spec = simgen.plm_treatment_spec()
    truth = dict(zip(PLM_TARGETS, config.theta_true))
    cells = [(learner, K) for learner in learner_list for K in K_list]

    def one_replicate(replicate: int) -> list:
        dataset = simgen.gen_plm(_replicate_config(config, master_seed, replicate))
        outcomes = list()
        for learner, K in cells:
            started = time.perf_counter()
            try:
                report = repeat_splits(dataset, spec, K, learner, n_splits, derive_seed(master_seed, replicate, K),
                                       runner=runner.inner())
                outcomes.append((report.theta, report.se, time.perf_counter() - started))
            except (LearnerError, FoldError, EstimationError) as e:
                _logger.warning("Replicate {} {} K={} failed: {}".format(replicate, _learner_label(learner), K, e))
                outcomes.append(None)
        _logger.debug("PLM bench replicate {} done".format(replicate))
        return outcomes

    def one_dataset() -> list:
        dataset = simgen.gen_plm(config)
        outcomes = list()
        for learner, K in cells:
            started = time.perf_counter()
            report = repeat_splits(dataset, spec, K, learner, n_replicates, config.seed, runner=runner)
            elapsed = (time.perf_counter() - started) / n_replicates
            outcomes.append([(r.theta, r.se, elapsed) for r in (report.splits or (report,))]
                            + [None] * len(report.failed_splits))
        return outcomes

    if mode == "replicates":
        per_replicate = runner.map(one_replicate, range(n_replicates))
        by_cell = [[outcomes[i] for outcomes in per_replicate] for i in range(len(cells))]
    else:
        by_cell = one_dataset()

    records = list()
    plot_data = list()
    failures = dict()
    wall_times = dict()
    for (learner, K), outcomes in zip(cells, by_cell):
        label = _learner_label(learner)
        done = [outcome for outcome in outcomes if outcome is not None]
        failures["{} K={}".format(label, K)] = len(outcomes) - len(done)
        if not done:
            continue
        wall_times["{} K={}".format(label, K)] = float(np.sum([outcome[2] for outcome in done]))
        for j, target in enumerate(PLM_TARGETS):
            estimates = [outcome[0][j] for outcome in done]
            errors = [outcome[1][j] for outcome in done]
            records.append(BenchRecord.summarise("dml_plm", label, K, target, truth[target], estimates, errors,
                                                 len(outcomes) - len(done), mode))
            for replicate, outcome in enumerate(outcomes):
                if outcome is not None:
                    plot_data.append({"method": "dml_plm", "learner": label, "K": K, "contrast": target,
                                      "replicate": replicate, "estimate": outcome[0][j], "se": outcome[1][j],
                                      "relative_bias": (outcome[0][j] - truth[target]) / truth[target]
                                      if truth[target] != 0 else float("nan")})
    _check_failures(failures, n_replicates)
    metadata = {"schema_version": BENCH_SCHEMA_VERSION, "kind": "plm", "mode": mode,
                "truths": truth, "n": config.n, "preset": config.preset, "master_seed": master_seed,
                "n_replicates": n_replicates, "n_splits": n_splits, "K": list(K_list),
                "learners": [_learner_label(learner) for learner in learner_list], "wall_time": wall_times}
    return BenchResult(tuple(records), tuple(plot_data), metadata)


def default_irm_learners() -> list[ArmLearners]:
    """Boosting for both nuisances, and a linear softmax propensity with OLS outcomes"""
    boosted = LearnerKind.from_config("boosted_trees")
    return [ArmLearners(boosted, boosted),
            ArmLearners(LearnerKind.from_config("multinomial_softmax"), LearnerKind.from_config("ols"))]


def run_irm_bench(config: IrmSimConfig, methods: Sequence[str] = ("dml_aipw", "ipw", "regression"),
                  learner_list: Optional[Sequence[ArmLearners]] = None, K_list: Sequence[int] = (5,),
                  n_replicates: int = 200, master_seed: int = 0,
                  runner: TaskRunner = SEQUENTIAL) -> BenchResult:
    """Replicated AIPW, IPW and regression-adjusted contrasts sharing one nuisance fit per replicate"""
    unknown = set(methods) - set(IRM_METHODS)
    if unknown:
        raise ConfigError("unknown method(s) {}".format(", ".join(sorted(unknown))))
    if n_replicates < 1:
        raise ConfigError("n_replicates must be at least 1")
    learner_list = list(learner_list) if learner_list is not None else default_irm_learners()
    truths = simgen.true_ates()
    contrasts = list(truths.keys())
    cells = [(learner, K) for learner in learner_list for K in K_list]

    def one_replicate(replicate: int) -> list:
        dataset = simgen.gen_irm(_replicate_config(config, master_seed, replicate))
        outcomes = list()
        for learner, K in cells:
            started = time.perf_counter()
            try:
                plan = make_folds(dataset.n, K, derive_seed(master_seed, replicate, K), dataset.regimen)
                nuisances = fit_arm_nuisances(dataset, plan, learner, runner.inner())
                report = aipw_contrasts(nuisances, dataset, contrasts, K, learner.ids())
                baselines = report.diagnostics["baselines"]
                values = {"dml_aipw": (report.theta, report.se)}
                for method in ("ipw", "ipw_hajek", "regression"):
                    values[method] = (np.asarray(baselines[method]), np.full(len(contrasts), np.nan))
                outcomes.append((values, time.perf_counter() - started))
            except (LearnerError, FoldError, EstimationError) as e:
                _logger.warning("Replicate {} {} K={} failed: {}".format(replicate, learner.label, K, e))
                outcomes.append(None)
        _logger.debug("IRM bench replicate {} done".format(replicate))
        return outcomes

    per_replicate = runner.map(one_replicate, range(n_replicates))

    records = list()
    plot_data = list()
    failures = dict()
    wall_times = dict()
    for i, (learner, K) in enumerate(cells):
        outcomes = [outcomes[i] for outcomes in per_replicate]
        done = [outcome for outcome in outcomes if outcome is not None]
        failures["{} K={}".format(learner.label, K)] = len(outcomes) - len(done)
        if not done:
            continue
        wall_times["{} K={}".format(learner.label, K)] = float(np.sum([outcome[1] for outcome in done]))
        for method in methods:
            for j, (b, c) in enumerate(contrasts):
                target = "ATE[{}-{}]".format(b, c)
                estimates = [outcome[0][method][0][j] for outcome in done]
                errors = [outcome[0][method][1][j] for outcome in done]
                records.append(BenchRecord.summarise(method, learner.label, K, target, truths[(b, c)], estimates,
                                                     errors, len(outcomes) - len(done), "replicates"))
                for replicate, outcome in enumerate(outcomes):
                    if outcome is not None:
                        estimate = outcome[0][method][0][j]
                        plot_data.append({"method": method, "learner": learner.label, "K": K,
                                          "contrast": target, "replicate": replicate, "estimate": estimate,
                                          "se": outcome[0][method][1][j],
                                          "relative_bias": (estimate - truths[(b, c)]) / truths[(b, c)]})
    _check_failures(failures, n_replicates)
    metadata = {"schema_version": BENCH_SCHEMA_VERSION, "kind": "irm", "mode": "replicates",
                "truths": {"ATE[{}-{}]".format(b, c): value for (b, c), value in truths.items()},
                "n": config.n, "preset": config.preset, "master_seed": master_seed,
                "n_replicates": n_replicates, "K": list(K_list), "methods": list(methods),
                "learners": [learner.label for learner in learner_list], "wall_time": wall_times}
    return BenchResult(tuple(records), tuple(plot_data), metadata)


def write_bench(result: BenchResult, directory: str, config_echo: Optional[dict] = None) -> list[str]:
    """records.csv, variance.csv, plot_data.csv and metadata.json in `directory`"""
    os.makedirs(directory, exist_ok=True)
    rows = [dataclasses.asdict(record) for record in result.records]
    paths = [os.path.join(directory, name) for name in ("records.csv", "variance.csv", "plot_data.csv",
                                                        "metadata.json")]
    write_table(paths[0], rows, RECORD_COLUMNS)
    write_table(paths[1], [{key: row[key] for key in VARIANCE_COLUMNS} for row in rows], VARIANCE_COLUMNS)
    write_table(paths[2], result.plot_data, PLOT_COLUMNS)
    metadata = dict(result.metadata)
    if config_echo is not None:
        metadata["config"] = config_echo
    write_json(paths[3], metadata)
    return paths
