import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from dataset import Dataset, DatasetError, InteractionSpec, TreatmentColumn


class DesignError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


@dataclass(frozen=True)
class TreatmentSpec:
    """Which treatments enter the model, in declaration order, and their interactions"""
    treatments: tuple
    interactions: tuple = ()

    @staticmethod
    def from_config(treatment_entries: list[dict], interaction_lists: list[list[str]]) -> "TreatmentSpec":
        try:
            interactions = tuple(InteractionSpec(tuple(factors)) for factors in interaction_lists)
        except DatasetError as e:
            raise DesignError(str(e))
        return TreatmentSpec(tuple(entry["name"] for entry in treatment_entries), interactions)


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    source: str
    kind: str
    # (treatment name, level index or None) per factor
    factors: tuple
    level_labels: tuple = ()
    is_reference_dropped: bool = False


@dataclass(frozen=True, eq=False)
class EncodedDesign:
    columns: np.ndarray
    column_meta: tuple
    treatment_kinds: tuple = ()

    @property
    def names(self) -> list[str]:
        return [meta.name for meta in self.column_meta]

    @property
    def n_treatment_columns(self) -> int:
        return sum(1 for meta in self.column_meta if meta.kind != "interaction")

    @property
    def n_interaction_columns(self) -> int:
        return sum(1 for meta in self.column_meta if meta.kind == "interaction")

    def constant_columns(self) -> list[str]:
        """Names of columns without variation in this sample"""
        spread = np.ptp(self.columns, axis=0) if self.columns.shape[0] else np.zeros(0)
        return [meta.name for meta, s in zip(self.column_meta, spread) if s == 0.0]

    def contrast_vector(self, assignment: dict) -> np.ndarray:
        """Encoded design row for a treatment assignment; unassigned treatments sit at reference / 0"""
        kinds = {name: (kind, levels, reference) for name, kind, levels, reference in self.treatment_kinds}
        row = np.empty(len(self.column_meta))
        for j, meta in enumerate(self.column_meta):
            value = 1.0
            for name, level in meta.factors:
                kind, levels, reference = kinds[name]
                assigned = assignment.get(name)
                if kind == "categorical":
                    index = reference if assigned is None else levels.index(str(assigned))
                    value *= 1.0 if index == level else 0.0
                else:
                    value *= 0.0 if assigned is None else float(assigned)
            row[j] = value
        return row


def _base_columns(treatment: TreatmentColumn) -> list[tuple]:
    if treatment.kind == "categorical":
        indicators = treatment.indicators()
        return [(indicators[:, level], (treatment.name, level), treatment.levels[level])
                for level in treatment.non_reference_levels()]
    return [(np.asarray(treatment.values, dtype=float), (treatment.name, None), None)]


def encode_treatments(dataset: Dataset, spec: TreatmentSpec) -> EncodedDesign:
    """Dummy-code categoricals (reference dropped) and append interaction products"""
    declared = list(spec.treatments)
    if len(set(declared)) != len(declared):
        raise DesignError("treatment declared twice: {}".format(declared))

    columns = list()
    meta = list()
    base = dict()
    kinds = list()
    for name in declared:
        try:
            treatment = dataset.treatment(name)
        except DatasetError:
            raise DesignError("unknown treatment {}".format(name))
        if treatment.kind == "categorical":
            observed = np.bincount(treatment.values, minlength=treatment.n_levels)
            if np.any(observed == 0):
                raise DesignError("treatment {}: a categorical level is never observed".format(name))
        base[name] = _base_columns(treatment)
        kinds.append((name, treatment.kind, tuple(treatment.levels), treatment.reference))
        for values, factor, label in base[name]:
            if label is None:
                meta.append(ColumnMeta(name, name, treatment.kind, (factor,)))
            else:
                meta.append(ColumnMeta("{}[{}]".format(name, label), name, "level", (factor,),
                                       (label,), True))
            columns.append(values)

    seen = set()
    for interaction in spec.interactions:
        for name in interaction.factors:
            if name not in base:
                raise DesignError("interaction {} names unknown treatment {}".format(interaction.name, name))
        key = frozenset(interaction.factors)
        if key in seen:
            raise DesignError("duplicate interaction {}".format(interaction.name))
        seen.add(key)
        for combination in itertools.product(*(base[name] for name in interaction.factors)):
            product = np.ones(dataset.n)
            parts = list()
            labels = list()
            for values, factor, label in combination:
                product = product * values
                parts.append(factor[0] if label is None else "{}[{}]".format(factor[0], label))
                labels.append(label)
            meta.append(ColumnMeta(":".join(parts), interaction.name, "interaction",
                                   tuple(c[1] for c in combination), tuple(labels),
                                   any(label is not None for label in labels)))
            columns.append(product)

    _check_interaction_count(len(declared), len(spec.interactions))
    matrix = np.column_stack(columns) if columns else np.zeros((dataset.n, 0))
    matrix.setflags(write=False)
    logging.getLogger(__name__).debug("Encoded design columns: {}".format([m.name for m in meta]))
    return EncodedDesign(matrix, tuple(meta), tuple(kinds))


def _check_interaction_count(n_treatments: int, n_interactions: int) -> None:
    if n_interactions > 2 ** n_treatments - n_treatments - 1:
        raise DesignError("{} interactions declared for {} treatments".format(n_interactions, n_treatments))


def enumerate_assignments(design: EncodedDesign, continuous: Optional[dict] = None) -> list[dict]:
    """Every combination of discrete treatment levels; continuous treatments are held fixed"""
    continuous = continuous or dict()
    axes = list()
    for name, kind, levels, reference in design.treatment_kinds:
        if kind == "categorical":
            ordered = [levels[reference]] + [levels[i] for i in range(len(levels)) if i != reference]
            axes.append([(name, level) for level in ordered])
        elif kind == "binary":
            axes.append([(name, 0), (name, 1)])
        else:
            axes.append([(name, continuous.get(name, 0.0))])
    return [dict(combination) for combination in itertools.product(*axes)]
