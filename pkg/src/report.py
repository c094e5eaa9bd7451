import datetime
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np
import pandas as pd

REPORT_SCHEMA_VERSION = 1
Z_95 = 1.96

_logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EstimateReport:
    """Coefficients (PLM) or contrasts (IRM) with covariance, SEs and diagnostics.

    `sigma` is the asymptotic covariance; standard errors are sqrt(diag(sigma) / n_obs).
    Split-aggregated reports keep their per-split reports in `splits`.
    """
    estimator: str
    names: tuple
    theta: np.ndarray
    sigma: np.ndarray
    se: np.ndarray
    n_obs: int
    n_folds: int
    n_splits: int = 1
    learner_ids: dict = field(default_factory=dict)
    score_residual_norm: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    splits: tuple = ()
    failed_splits: tuple = ()

    @staticmethod
    def from_sigma(estimator: str, names: Sequence[str], theta: np.ndarray, sigma: np.ndarray, n_obs: int,
                   n_folds: int, **kwargs) -> "EstimateReport":
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        sigma = 0.5 * (sigma + sigma.T)
        se = np.sqrt(np.maximum(np.diag(sigma), 0.0) / n_obs)
        return EstimateReport(estimator, tuple(names), np.atleast_1d(np.asarray(theta, dtype=float)),
                              sigma, se, n_obs, n_folds, **kwargs)

    @property
    def ci95(self) -> np.ndarray:
        return np.column_stack([self.theta - Z_95 * self.se, self.theta + Z_95 * self.se])

    def index(self, name: str) -> int:
        if name not in self.names:
            raise KeyError("no coefficient {}; have {}".format(name, ", ".join(self.names)))
        return self.names.index(name)

    def estimate(self, name: Optional[str] = None) -> float:
        return float(self.theta[0 if name is None else self.index(name)])

    def std_error(self, name: Optional[str] = None) -> float:
        return float(self.se[0 if name is None else self.index(name)])

    def with_diagnostics(self, **diagnostics) -> "EstimateReport":
        merged = dict(self.diagnostics)
        merged.update(diagnostics)
        return replace(self, diagnostics=merged)


def aggregate_splits(reports: Sequence[EstimateReport], failures: Sequence[dict] = ()) -> EstimateReport:
    """Coordinatewise median of estimates and of SEs across splits.

    Covariances are not aggregated; the returned sigma is diag(n * se^2) of the median SEs.
    """
    if not reports:
        raise ValueError("no split reports to aggregate")
    if len(reports) == 1 and not failures:
        return reports[0]
    first = reports[0]
    theta = np.median(np.vstack([r.theta for r in reports]), axis=0)
    se = np.median(np.vstack([r.se for r in reports]), axis=0)
    sigma = np.diag(first.n_obs * se ** 2)
    return EstimateReport(first.estimator, first.names, theta, sigma, se, first.n_obs, first.n_folds,
                          len(reports) + len(failures), first.learner_ids,
                          max(r.score_residual_norm for r in reports),
                          {"splits_used": len(reports), "splits_failed": len(failures)},
                          tuple(reports), tuple(failures))


def _plain(value: Any) -> Any:
    """JSON-ready copy; NaN and infinities become null"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    return value


def to_dict(report: EstimateReport) -> dict:
    """Report payload without timestamps"""
    ci = report.ci95
    coefficients = [{"name": name, "estimate": report.theta[j], "se": report.se[j],
                     "ci95_low": ci[j, 0], "ci95_high": ci[j, 1]}
                    for j, name in enumerate(report.names)]
    payload = {
        "estimator": report.estimator,
        "coefficients": coefficients,
        "sigma": report.sigma,
        "n_obs": report.n_obs,
        "n_folds": report.n_folds,
        "n_splits": report.n_splits,
        "learner_ids": report.learner_ids,
        "score_residual_norm": report.score_residual_norm,
        "diagnostics": report.diagnostics,
    }
    if report.splits:
        payload["splits"] = [{"theta": r.theta, "se": r.se, "seed": r.diagnostics.get("seed")}
                             for r in report.splits]
        payload["failed_splits"] = list(report.failed_splits)
    return _plain(payload)


def write_report(path: str, report: EstimateReport, config: dict, extra: Optional[dict] = None) -> None:
    """JSON report: payload and config echo, timestamps kept apart under metadata"""
    document = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "report": to_dict(report),
        "config": _plain(config),
        "metadata": {"created": datetime.datetime.now(datetime.timezone.utc).isoformat()},
    }
    if extra:
        document.update(_plain(extra))
    _logger.debug("Writing report {}".format(path))
    with open(path, "w") as json_file:
        json.dump(document, json_file, indent=2, sort_keys=True)


def write_json(path: str, document: dict) -> None:
    with open(path, "w") as json_file:
        json.dump(_plain(document), json_file, indent=2, sort_keys=True)


def write_table(path: str, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    """Delimited table; column order from `columns`, else first-row order"""
    frame = pd.DataFrame(list(rows), columns=list(columns) if columns is not None else None)
    _logger.debug("Writing {} row(s) to {}".format(frame.shape[0], path))
    frame.to_csv(path, index=False, float_format="%.10g")
