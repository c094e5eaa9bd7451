import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from config import Config

_logger = logging.getLogger(__name__)

MISSING_MARKERS = ["", "NA"]


class DatasetError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


def _frozen(values, dtype=None) -> np.ndarray:
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TreatmentColumn:
    """One treatment; categorical values are level indices into `levels`"""
    name: str
    kind: str
    values: np.ndarray
    levels: tuple = ()
    reference: int = 0

    def __post_init__(self):
        if self.kind not in ("binary", "categorical", "continuous"):
            raise DatasetError("treatment {}: unknown kind {!r}".format(self.name, self.kind))
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise DatasetError("treatment {}: values must be a vector".format(self.name))
        if self.kind == "continuous":
            values = _frozen(values, dtype=float)
            if not np.all(np.isfinite(values)):
                raise DatasetError("treatment {}: non-finite values".format(self.name))
        elif self.kind == "binary":
            values = _frozen(values, dtype=float)
            if not np.all((values == 0.0) | (values == 1.0)):
                raise DatasetError("treatment {}: binary values must be 0/1".format(self.name))
        else:
            if not np.all(np.asarray(values, dtype=float) == np.round(np.asarray(values, dtype=float))):
                raise DatasetError("treatment {}: categorical values must be level indices"
                                   .format(self.name))
            values = _frozen(values, dtype=int)
            levels = self.levels
            if not levels:
                levels = tuple(str(i) for i in range(int(values.max()) + 1 if values.size else 0))
                object.__setattr__(self, "levels", levels)
            if len(levels) < 2:
                raise DatasetError("treatment {}: a categorical needs two or more levels"
                                   .format(self.name))
            if values.min() < 0 or values.max() >= len(levels):
                raise DatasetError("treatment {}: level index out of range".format(self.name))
            missing = [levels[i] for i in range(len(levels)) if not np.any(values == i)]
            if missing:
                raise DatasetError("treatment {}: level(s) never observed: {}"
                                   .format(self.name, ", ".join(map(str, missing))))
            if not 0 <= self.reference < len(levels):
                raise DatasetError("treatment {}: reference level out of range".format(self.name))
        object.__setattr__(self, "values", values)

    @property
    def n_levels(self) -> int:
        return len(self.levels) if self.kind == "categorical" else 0

    def non_reference_levels(self) -> list[int]:
        """Level indices kept after dropping the reference, in declaration order"""
        return [i for i in range(self.n_levels) if i != self.reference]

    def indicators(self) -> np.ndarray:
        """Full n x (L+1) dummy matrix, reference level included"""
        if self.kind != "categorical":
            raise DatasetError("treatment {} is not categorical".format(self.name))
        return (self.values[:, None] == np.arange(self.n_levels)[None, :]).astype(float)


@dataclass(frozen=True)
class InteractionSpec:
    factors: tuple

    def __post_init__(self):
        factors = tuple(self.factors)
        if len(factors) < 2:
            raise DatasetError("an interaction needs at least two factors: {}".format(factors))
        if len(set(factors)) != len(factors):
            raise DatasetError("interaction factors must be distinct: {}".format(factors))
        object.__setattr__(self, "factors", factors)

    @property
    def name(self) -> str:
        return ":".join(self.factors)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    treatments: tuple = ()
    regimen: Optional[np.ndarray] = None
    covariate_names: tuple = ()
    regimen_labels: tuple = ()
    outcome_name: str = "Y"
    regimen_name: str = "R"
    oracle: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Y = np.asarray(self.Y, dtype=float)
        n = Y.shape[0]
        if n < 1:
            raise DatasetError("a dataset needs at least one observation")
        if X.ndim != 2 or X.shape[0] != n:
            raise DatasetError("X has {} rows, Y has {}".format(X.shape[0], n))
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(Y)):
            raise DatasetError("X and Y must be finite")
        for treatment in self.treatments:
            if treatment.values.shape[0] != n:
                raise DatasetError("treatment {} has {} rows, expected {}"
                                   .format(treatment.name, treatment.values.shape[0], n))
        if len({t.name for t in self.treatments}) != len(self.treatments):
            raise DatasetError("treatment names must be unique")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "Y", _frozen(Y))
        object.__setattr__(self, "treatments", tuple(self.treatments))
        if not self.covariate_names:
            object.__setattr__(self, "covariate_names",
                               tuple("X{}".format(j + 1) for j in range(X.shape[1])))

        if self.regimen is not None:
            regimen = np.asarray(self.regimen)
            if regimen.shape != (n,):
                raise DatasetError("regimen must be a vector of length {}".format(n))
            if not np.all(regimen == np.round(regimen)):
                raise DatasetError("regimen values must be integers 1..D")
            regimen = _frozen(regimen, dtype=int)
            labels = self.regimen_labels or tuple(str(d) for d in range(1, int(regimen.max()) + 1))
            D = len(labels)
            if regimen.min() < 1 or regimen.max() > D:
                raise DatasetError("regimen values must lie in 1..{}".format(D))
            absent = [labels[d - 1] for d in range(1, D + 1) if not np.any(regimen == d)]
            if absent:
                raise DatasetError("regimen categories never observed: {}".format(", ".join(absent)))
            object.__setattr__(self, "regimen", regimen)
            object.__setattr__(self, "regimen_labels", tuple(labels))

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n_regimens(self) -> int:
        return len(self.regimen_labels) if self.regimen is not None else 0

    def treatment(self, name: str) -> TreatmentColumn:
        for treatment in self.treatments:
            if treatment.name == name:
                return treatment
        raise DatasetError("unknown treatment {}".format(name))

    def regimen_code(self, label) -> int:
        """Map a regimen label (or 1-based code) to its 1-based code"""
        if self.regimen is None:
            raise DatasetError("dataset has no regimen column")
        label = str(label)
        if label in self.regimen_labels:
            return self.regimen_labels.index(label) + 1
        raise DatasetError("unknown regimen {}; known: {}".format(label, ", ".join(self.regimen_labels)))

    def take(self, rows: Sequence[int]) -> "Dataset":
        """Row subset / permutation of the dataset"""
        rows = np.asarray(rows)
        treatments = tuple(TreatmentColumn(t.name, t.kind, t.values[rows], t.levels, t.reference)
                           for t in self.treatments)
        oracle = {key: np.asarray(value)[rows] for key, value in self.oracle.items()
                  if np.ndim(value) >= 1 and np.shape(value)[0] == self.n}
        return Dataset(self.X[rows], self.Y[rows], treatments,
                       None if self.regimen is None else self.regimen[rows],
                       self.covariate_names, self.regimen_labels,
                       self.outcome_name, self.regimen_name, oracle)

    def to_frame(self) -> pd.DataFrame:
        """Flatten into the CSV ingestion layout"""
        frame = pd.DataFrame(np.asarray(self.X), columns=list(self.covariate_names))
        for treatment in self.treatments:
            if treatment.kind == "categorical":
                frame[treatment.name] = [treatment.levels[v] for v in treatment.values]
            elif treatment.kind == "binary":
                frame[treatment.name] = treatment.values.astype(int)
            else:
                frame[treatment.name] = treatment.values
        if self.regimen is not None:
            frame[self.regimen_name] = [self.regimen_labels[d - 1] for d in self.regimen]
        frame[self.outcome_name] = self.Y
        return frame

    def ingestion_config(self) -> dict:
        """Configuration that re-reads the output of `to_frame`"""
        treatments = list()
        for treatment in self.treatments:
            entry = {"name": treatment.name, "kind": treatment.kind}
            if treatment.kind == "categorical":
                entry["levels"] = list(treatment.levels)
                entry["reference"] = treatment.levels[treatment.reference]
            treatments.append(entry)
        config = {"outcome": self.outcome_name, "covariates": list(self.covariate_names),
                  "treatments": treatments}
        if self.regimen is not None:
            config["regimen"] = {"column": self.regimen_name, "levels": list(self.regimen_labels)}
        return config


def _check_missing(frame: pd.DataFrame, columns: list[str], drop: bool) -> pd.DataFrame:
    missing = frame[columns].isna()
    if not missing.values.any():
        return frame
    cells = list()
    for row, column in zip(*np.nonzero(missing.values)):
        # header is line 1 of the file
        cells.append("row {} column {}".format(row + 2, columns[column]))
    if drop:
        _logger.warning("Dropping {} row(s) with missing cells: {}"
                        .format(int(missing.any(axis=1).sum()), "; ".join(cells[:20])))
        return frame.loc[~missing.any(axis=1)].reset_index(drop=True)
    raise DatasetError("missing values at {}".format("; ".join(cells[:50])))


def _categorical(name: str, column: pd.Series, entry: dict) -> TreatmentColumn:
    labels = column.astype(str)
    declared = entry.get("levels")
    if declared is None:
        levels = tuple(sorted(labels.unique(), key=lambda v: (_numeric_key(v), v)))
    else:
        levels = tuple(str(level) for level in declared)
        unknown = sorted(set(labels.unique()) - set(levels))
        if unknown:
            raise DatasetError("treatment {}: undeclared level(s) {}".format(name, ", ".join(unknown)))
    reference = entry.get("reference")
    reference_index = 0 if reference is None else levels.index(str(reference)) \
        if str(reference) in levels else -1
    if reference_index < 0:
        raise DatasetError("treatment {}: reference {} is not a level".format(name, reference))
    index = {level: i for i, level in enumerate(levels)}
    values = np.array([index[v] for v in labels], dtype=int)
    return TreatmentColumn(name, "categorical", values, levels, reference_index)


def _numeric_key(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        return float("inf")


def _numeric(name: str, column: pd.Series) -> np.ndarray:
    try:
        return pd.to_numeric(column).to_numpy(dtype=float)
    except (ValueError, TypeError):
        raise DatasetError("column {} must be numeric".format(name))


def read_csv(path: str, config: Config, require_regimen: bool = False) -> Dataset:
    """Read a CSV with a header row into a Dataset as described by the config"""
    _logger.debug("Reading {}".format(path))
    try:
        frame = pd.read_csv(path, na_values=MISSING_MARKERS, keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError("cannot parse {}: {}".format(path, e))
    columns = list(frame.columns)

    outcome = config.outcome_column()
    treatment_entries = config.treatments_config()
    treatment_names = [entry["name"] for entry in treatment_entries]
    regimen_name = config.regimen_column()
    has_regimen = regimen_name in columns
    if config.regimen_config() is not None and not has_regimen:
        raise DatasetError("regimen column {} not found".format(regimen_name))
    if require_regimen and not has_regimen:
        raise DatasetError("regimen column {} not found".format(regimen_name))

    used = [outcome] + treatment_names + ([regimen_name] if has_regimen else [])
    for name in used:
        if name not in columns:
            raise DatasetError("column {} not found in {}".format(name, path))
    covariates = config.covariate_columns()
    if covariates is None:
        covariates = [c for c in columns if c not in used]
    for name in covariates:
        if name not in columns:
            raise DatasetError("covariate {} not found in {}".format(name, path))
    if not covariates:
        raise DatasetError("no covariate columns in {}".format(path))

    frame = _check_missing(frame, covariates + used, config.drop_missing())
    if frame.shape[0] == 0:
        raise DatasetError("no complete rows in {}".format(path))

    X = np.column_stack([_numeric(c, frame[c]) for c in covariates])
    Y = _numeric(outcome, frame[outcome])

    treatments = list()
    for entry in treatment_entries:
        name = entry["name"]
        if entry["kind"] == "categorical":
            treatments.append(_categorical(name, frame[name], entry))
        else:
            treatments.append(TreatmentColumn(name, entry["kind"], _numeric(name, frame[name])))

    regimen = None
    regimen_labels: tuple = ()
    if has_regimen:
        labels = frame[regimen_name].astype(str)
        declared = (config.regimen_config() or dict()).get("levels")
        if declared is None:
            regimen_labels = tuple(sorted(labels.unique(), key=lambda v: (_numeric_key(v), v)))
        else:
            regimen_labels = tuple(str(level) for level in declared)
            unknown = sorted(set(labels.unique()) - set(regimen_labels))
            if unknown:
                raise DatasetError("undeclared regimen value(s) {}".format(", ".join(unknown)))
        code = {label: d + 1 for d, label in enumerate(regimen_labels)}
        regimen = np.array([code[v] for v in labels], dtype=int)

    return Dataset(X, Y, tuple(treatments), regimen, tuple(covariates), regimen_labels,
                   outcome, regimen_name)


def write_dataset_csv(dataset: Dataset, path: str) -> dict:
    """Write a dataset as CSV and return the matching ingestion config"""
    _logger.debug("Writing {} rows to {}".format(dataset.n, path))
    dataset.to_frame().to_csv(path, index=False, float_format="%.17g")
    return dataset.ingestion_config()
