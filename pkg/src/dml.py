import argparse
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import bench
import checks
import simgen
from bench import BenchError
from config import Config, ConfigError
from crossfit import FoldError
from dataset import DatasetError, read_csv, write_dataset_csv
from design import DesignError, TreatmentSpec, enumerate_assignments
from irm import ArmLearners, all_contrasts, estimate_irm_contrasts
from learners import LearnerError, LearnerSet
from plm import EstimationError, effect_differences, prepare_design, repeat_splits
from report import to_dict, write_json, write_report, write_table
from simgen import CohortSimConfig, IrmSimConfig, PlmSimConfig
from task_runner import TaskRunner

APP_NAME = "dml"
MODES = ("plm", "irm", "sim-plm", "sim-irm", "sim-cohort", "bench-plm", "bench-irm", "check")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4

_logger = logging.getLogger(APP_NAME)


def enable_debug(enabled: bool) -> None:
    level = logging.DEBUG if enabled else logging.INFO
    logger = logging.getLogger()
    logger.setLevel(level)
    logger.debug("Logging level changed to {}".format("debug" if enabled else "info"))
    for handler in logger.handlers:
        if isinstance(handler, type(logging.StreamHandler())):
            handler.setLevel(level)


@dataclass
class RunConfig:
    """Parsed command line; flag values replace config file values"""
    mode: str
    data: Optional[str] = None
    config: Optional[str] = None
    out: Optional[str] = None
    seed: Optional[int] = None
    folds: list = field(default_factory=list)
    learners: list = field(default_factory=list)
    splits: Optional[int] = None
    clip_eps: Optional[float] = None
    threads: Optional[int] = None
    stratify: Optional[str] = None
    arms: list = field(default_factory=list)
    n: Optional[int] = None
    preset: Optional[str] = None
    replicates: Optional[int] = None
    bench_mode: str = "replicates"
    suites: list = field(default_factory=list)

    @staticmethod
    def from_args(args: argparse.Namespace) -> "RunConfig":
        run = RunConfig(args.mode, args.data, args.config, args.out, args.seed, args.k or list(),
                        args.learner or list(), args.splits, args.clip_eps, args.threads, args.stratify,
                        args.arms or list(), args.n, args.preset, args.replicates, args.bench_mode,
                        args.suite or list())
        run.validate()
        return run

    def validate(self) -> None:
        if self.mode in ("plm", "irm") and self.data is None:
            raise ConfigError("{} needs --data".format(self.mode))
        if self.mode == "plm" and self.config is None:
            raise ConfigError("plm needs --config naming the treatments")
        if self.mode in ("plm", "irm") and len(self.folds) > 1:
            raise ConfigError("{} takes a single --k".format(self.mode))
        if self.mode in ("plm", "irm") and len(self.learners) > 1:
            raise ConfigError("{} takes a single --learner".format(self.mode))
        if self.mode == "irm" and self.arms and len(self.arms) != 2:
            raise ConfigError("--arms takes two regimen labels")
        for flag, value in (("--threads", self.threads), ("--splits", self.splits), ("--replicates", self.replicates),
                            ("--n", self.n)):
            if value is not None and value < 1:
                raise ConfigError("{} must be at least 1, got {}".format(flag, value))
        if any(k < 1 for k in self.folds):
            raise ConfigError("--k must be at least 1")
        if self.out is not None and not self.mode.startswith("sim-"):
            parent = os.path.abspath(self.out)
            while not os.path.exists(parent):
                parent = os.path.dirname(parent)
            if not os.access(parent, os.W_OK):
                raise OSError("output directory {} is not writable".format(self.out))

    def output_dir(self) -> str:
        return self.out if self.out is not None else "dml-{}".format(self.mode)

    def apply(self, config: Config) -> None:
        """Flags win over config file values"""
        config.override("seed", self.seed)
        config.override("folds", self.folds[0] if self.folds else None)
        config.override("splits", self.splits)
        config.override("stratify", self.stratify)
        config.override("clip_eps", self.clip_eps)
        config.override("threads", self.threads)
        config.override("learners", {"kind": self.learners[0]} if self.learners else None)
        config.validate()


def _load_config(run: RunConfig) -> Config:
    config = Config(run.config)
    config.load()
    run.apply(config)
    return config


def _learner_error_as_config(function, *args):
    try:
        return function(*args)
    except LearnerError as e:
        raise ConfigError(str(e))


def run_plm(run: RunConfig) -> int:
    config = _load_config(run)
    dataset = read_csv(run.data, config)
    spec = TreatmentSpec.from_config(config.treatments_config(), config.interactions_config())
    learner_set = _learner_error_as_config(LearnerSet.from_config, config.learners_config(), config.clip_eps())
    runner = TaskRunner(config.threads())
    _logger.info("PLM on {} rows, {} split(s) of {} folds".format(dataset.n, config.n_splits(), config.folds()))
    report = repeat_splits(dataset, spec, config.folds(), learner_set, config.n_splits(), config.seed(),
                           config.stratify_on(), runner)

    directory = run.output_dir()
    os.makedirs(directory, exist_ok=True)
    extra = dict()
    if config.contrasts():
        design = prepare_design(dataset, spec)
        effects = effect_differences(report, design, enumerate_assignments(design))
        write_table(os.path.join(directory, "effects.csv"), effects)
        extra["effects"] = effects
    write_report(os.path.join(directory, "report.json"), report, config.resolved(), extra)
    write_table(os.path.join(directory, "coefficients.csv"), to_dict(report)["coefficients"])
    return EXIT_OK


def run_irm(run: RunConfig) -> int:
    config = _load_config(run)
    dataset = read_csv(run.data, config, require_regimen=True)
    arm_learners = _learner_error_as_config(ArmLearners.from_config, config.learners_config(), config.clip_eps())
    if run.arms:
        contrasts = [(dataset.regimen_code(run.arms[0]), dataset.regimen_code(run.arms[1]))]
    else:
        contrasts = all_contrasts(dataset.n_regimens)
    runner = TaskRunner(config.threads())
    _logger.info("IRM on {} rows, contrasts {}".format(dataset.n, contrasts))
    report = estimate_irm_contrasts(dataset, contrasts, config.folds(), arm_learners, config.n_splits(),
                                    config.seed(), runner)

    directory = run.output_dir()
    os.makedirs(directory, exist_ok=True)
    write_report(os.path.join(directory, "report.json"), report, config.resolved())
    write_table(os.path.join(directory, "contrasts.csv"), to_dict(report)["coefficients"])
    return EXIT_OK


def run_simulation(run: RunConfig) -> int:
    seed = run.seed if run.seed is not None else 0
    if run.mode == "sim-plm":
        sim = PlmSimConfig(run.n or PlmSimConfig.n, seed=seed, preset=run.preset or PlmSimConfig.preset)
        dataset = simgen.gen_plm(sim)
        spec = simgen.plm_treatment_spec()
    elif run.mode == "sim-irm":
        sim = IrmSimConfig(run.n or IrmSimConfig.n, seed=seed, preset=run.preset or IrmSimConfig.preset)
        dataset = simgen.gen_irm(sim)
        spec = TreatmentSpec(())
    else:
        dataset = simgen.gen_cohort(CohortSimConfig(run.n or CohortSimConfig.n, seed=seed))
        spec = simgen.cohort_treatment_spec()
    path = run.out or "{}.csv".format(run.mode)
    write_dataset_csv(dataset, path)
    config = simgen.simulation_config(dataset, spec)
    config_path = os.path.splitext(path)[0] + ".json"
    write_json(config_path, config)
    _logger.info("Wrote {} rows to {} (config {})".format(dataset.n, path, config_path))
    return EXIT_OK


def _bench_learners(run: RunConfig) -> list:
    names = run.learners or ["ols", "random_forest", "boosted_trees"]
    return [_learner_error_as_config(LearnerSet.from_config, name, run.clip_eps) for name in names]


def run_bench(run: RunConfig) -> int:
    seed = run.seed if run.seed is not None else 0
    runner = TaskRunner(run.threads or 1)
    if run.mode == "bench-plm":
        folds = run.folds or [2, 5]
        sim = PlmSimConfig(run.n or PlmSimConfig.n, preset=run.preset or PlmSimConfig.preset, seed=seed)
        result = bench.run_plm_bench(sim, _bench_learners(run), folds, run.replicates or 100, run.splits or 1,
                                     seed, run.bench_mode, runner)
    else:
        sim = IrmSimConfig(run.n or IrmSimConfig.n, preset=run.preset or IrmSimConfig.preset, seed=seed)
        folds = run.folds or [5]
        learner_list = None
        if run.learners:
            learner_list = [_learner_error_as_config(ArmLearners.from_config, name, run.clip_eps)
                            for name in run.learners]
        result = bench.run_irm_bench(sim, bench.IRM_METHODS, learner_list, folds,
                                     run.replicates or 200, seed, runner)
    bench.write_bench(result, run.output_dir(), {"mode": run.mode, "n": sim.n, "preset": sim.preset,
                                                 "seed": seed, "folds": folds, "learners": run.learners})
    for record in result.records:
        _logger.info("{} {} K={} {}: bias {:.4f} rmse {:.4f} coverage {:.3f}".format(
            record.estimator, record.learner, record.K, record.target, record.bias, record.rmse,
            record.coverage95))
    return EXIT_OK


def run_check(run: RunConfig) -> int:
    results = checks.run_checks(run.suites or None, run.seed or 0)
    checks.write_checks(results, run.output_dir())
    failed = [result for result in results if not result.passed]
    for result in results:
        _logger.info("{:<8} {} / {}".format("ok" if result.passed else "FAILED", result.suite, result.name))
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=APP_NAME,
        description="Double machine learning estimates for multiple treatments, interactions and "
                    "multi-valued regimens"
    )
    parser.add_argument('mode', choices=MODES)
    parser.add_argument('-d', '--data', help="CSV input with a header row", dest='data')
    parser.add_argument('-c', '--config', help="JSON run configuration", dest='config')
    parser.add_argument('-o', '--out', help="Output directory (CSV file for sim-* modes)", dest='out')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--k', type=int, nargs='+', help="Fold count; bench modes accept several")
    parser.add_argument('--splits', type=int, help="Number of sample splits to median-aggregate")
    parser.add_argument('--learner', nargs='+', help="Learner kind; bench modes accept several")
    parser.add_argument('--clip-eps', type=float, dest='clip_eps')
    parser.add_argument('--threads', type=int)
    parser.add_argument('--stratify', help="Stratify PLM folds on a binary/categorical treatment")
    parser.add_argument('--arms', nargs='+', help="Regimen labels b c for ATE_bc")
    parser.add_argument('--n', type=int, help="Simulated sample size")
    parser.add_argument('--preset')
    parser.add_argument('--replicates', type=int)
    parser.add_argument('--bench-mode', dest='bench_mode', choices=bench.BENCH_MODES, default="replicates")
    parser.add_argument('--suite', nargs='+', choices=checks.SUITES)
    parser.add_argument('--debug', action='store_true')
    return parser


def _fail(code: int, error: Exception) -> int:
    print("error: {}".format(type(error).__name__), file=sys.stderr)
    print(str(error), file=sys.stderr)
    return code


def run(argv: Optional[list[str]] = None) -> int:
    """Parse the command line, run the mode and map failures onto exit codes"""
    args = parser().parse_args(argv)
    enable_debug(args.debug)
    try:
        run_config = RunConfig.from_args(args)
        if run_config.mode == "plm":
            return run_plm(run_config)
        if run_config.mode == "irm":
            return run_irm(run_config)
        if run_config.mode.startswith("sim-"):
            return run_simulation(run_config)
        if run_config.mode.startswith("bench-"):
            return run_bench(run_config)
        return run_check(run_config)
    except (ConfigError, DatasetError, DesignError) as e:
        return _fail(EXIT_CONFIG, e)
    except (LearnerError, FoldError, EstimationError, BenchError) as e:
        return _fail(EXIT_ESTIMATION, e)
    except OSError as e:
        return _fail(EXIT_IO, e)


if __name__ == '__main__':
    logging.basicConfig(level=logging.INFO)
    sys.exit(run())
