"""Synthetic data generators for the partial linear and interactive model benchmarks.

The confounding forms below are documented surrogates: mixtures of linear, nonlinear
and interaction terms in ten covariates, X1..X5 standard normal and X6..X10 Bernoulli.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from dataset import Dataset, DatasetError, InteractionSpec, TreatmentColumn
from design import TreatmentSpec

BINARY_PROBS = (0.2, 0.35, 0.5, 0.7, 0.45)
PLM_PRESETS = ("mixed", "linear", "null")
IRM_PRESETS = ("mixed", "symmetric")
MIN_ROWS = 50
STREAMS = ("x_normal", "x_binary", "treatment", "treatment_noise", "outcome")

COHORT_LEVELS = ("NNRTI", "bPI", "DTG")
COHORT_EFFECTS = {"ART[bPI]": -11.1, "ART[DTG]": -20.3, "TDF": -2.9, "HTN": -0.6,
                  "ART[bPI]:TDF": 1.3, "ART[DTG]:TDF": 6.2}

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlmSimConfig:
    n: int = 2000
    theta_true: tuple = (5.0, 15.0, 5.0)
    seed: int = 0
    preset: str = "mixed"

    def __post_init__(self):
        if self.n < MIN_ROWS:
            raise DatasetError("simulated datasets need at least {} rows".format(MIN_ROWS))
        if self.preset not in PLM_PRESETS:
            raise DatasetError("unknown preset {}; expected one of {}".format(self.preset, ", ".join(PLM_PRESETS)))
        if len(self.theta_true) != 3:
            raise DatasetError("theta_true needs three values")


@dataclass(frozen=True)
class IrmSimConfig:
    n: int = 1000
    D: int = 3
    seed: int = 0
    preset: str = "mixed"

    def __post_init__(self):
        if self.n < MIN_ROWS:
            raise DatasetError("simulated datasets need at least {} rows".format(MIN_ROWS))
        if self.D != 3:
            raise DatasetError("the regimen simulation has three arms")
        if self.preset not in IRM_PRESETS:
            raise DatasetError("unknown preset {}; expected one of {}".format(self.preset, ", ".join(IRM_PRESETS)))


@dataclass(frozen=True)
class CohortSimConfig:
    n: int = 2455
    seed: int = 0
    noise_sd: float = 8.0


def _streams(seed: int, names=STREAMS) -> dict:
    """Independent generators per concern so a larger n extends rather than reshuffles"""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def _covariates(streams: dict, n: int) -> np.ndarray:
    normal = streams["x_normal"].standard_normal((n, 5))
    binary = (streams["x_binary"].random((n, 5)) < np.array(BINARY_PROBS)).astype(float)
    return np.hstack([normal, binary])


def _outcome_base(X: np.ndarray) -> np.ndarray:
    """X1 + 0.5 X2^2 + cos(X3) + 0.5 X4 X5 + 0.8 X6 - 0.5 X7 X10"""
    return (X[:, 0] + 0.5 * X[:, 1] ** 2 + np.cos(X[:, 2]) + 0.5 * X[:, 3] * X[:, 4]
            + 0.8 * X[:, 5] - 0.5 * X[:, 6] * X[:, 9])


def plm_nuisance_forms(X: np.ndarray, preset: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(m1 = logit P(A1=1|X), m2 = E[A2|X], g) for a preset"""
    if preset == "null":
        zero = np.zeros(X.shape[0])
        return zero, zero.copy(), zero.copy()
    if preset == "linear":
        m1 = 0.5 * X[:, 0] - 0.5 * X[:, 1] + 0.5 * X[:, 5]
        m2 = 0.5 * X[:, 0] + 0.5 * X[:, 2] - 0.5 * X[:, 6]
        g = X[:, 0] + X[:, 1] - X[:, 3] + X[:, 5] + X[:, 7]
        return m1, m2, g
    m1 = 0.5 * X[:, 0] - 0.4 * X[:, 1] ** 2 + 0.4 + 0.5 * np.sin(X[:, 2]) + 0.6 * X[:, 5] - 0.5 * X[:, 7]
    m2 = 0.5 * X[:, 0] + 0.5 * np.tanh(X[:, 3]) + 0.3 * X[:, 1] * X[:, 4] + 0.5 * X[:, 6] - 0.4 * X[:, 8]
    return m1, m2, _outcome_base(X)


def analytic_mean_g(preset: str) -> float:
    """E[g(X)] under the covariate distribution"""
    p = BINARY_PROBS
    if preset == "null":
        return 0.0
    if preset == "linear":
        return p[0] + p[2]
    # E[X2^2] = 1, E[cos X3] = exp(-1/2)
    return 0.5 + float(np.exp(-0.5)) + 0.8 * p[0] - 0.5 * p[1] * p[4]


def plm_treatment_spec() -> TreatmentSpec:
    return TreatmentSpec(("A1", "A2"), (InteractionSpec(("A1", "A2")),))


def gen_plm(config: PlmSimConfig) -> Dataset:
    """Binary A1, continuous A2 and their product with the configured effects; oracle kept per row"""
    streams = _streams(config.seed)
    n = config.n
    X = _covariates(streams, n)
    m1, m2, g = plm_nuisance_forms(X, config.preset)
    pi = special.expit(m1)
    A1 = (streams["treatment"].random(n) < pi).astype(float)
    A2 = m2 + streams["treatment_noise"].standard_normal(n)
    theta1, theta2, theta3 = config.theta_true
    Y = theta1 * A1 + theta2 * A2 + theta3 * A1 * A2 + g + streams["outcome"].standard_normal(n)
    oracle = {
        "m1": m1, "pi": pi, "m2": m2, "g": g,
        # A2 noise is independent of A1 given X
        "m_interaction": pi * m2,
        "l": theta1 * pi + theta2 * m2 + theta3 * pi * m2 + g,
    }
    _logger.debug("Generated PLM data: n={} preset={} seed={}".format(n, config.preset, config.seed))
    return Dataset(X, Y, (TreatmentColumn("A1", "binary", A1), TreatmentColumn("A2", "continuous", A2)),
                   oracle=oracle)


def irm_logits(X: np.ndarray, preset: str) -> np.ndarray:
    """n x 3 logits (l1, l2, l3) with l1 = 1"""
    n = X.shape[0]
    l1 = np.ones(n)
    if preset == "symmetric":
        return np.column_stack([l1, np.ones(n), np.ones(n)])
    l2 = 0.5 + 0.8 * X[:, 0] - 0.3 * X[:, 1] ** 2 + 0.5 * np.sin(X[:, 2]) + 0.4 * X[:, 5]
    l3 = 0.3 - 0.6 * X[:, 0] + 0.4 * X[:, 3] * X[:, 4] + 0.5 * X[:, 8] - 0.3 * X[:, 6]
    return np.column_stack([l1, l2, l3])


def true_ates() -> dict:
    """Population contrasts: 5, 15 E[X9], and their difference"""
    effect3 = 15.0 * BINARY_PROBS[3]
    return {(2, 1): 5.0, (3, 1): effect3, (3, 2): effect3 - 5.0}


def gen_irm(config: IrmSimConfig) -> Dataset:
    """Three regimens drawn from softmax propensities; Y = 5 1{R=2} + 15 1{R=3} X9 + b(X) + noise"""
    streams = _streams(config.seed)
    n = config.n
    X = _covariates(streams, n)
    m = special.softmax(irm_logits(X, config.preset), axis=1)
    u = streams["treatment"].random(n)
    R = 1 + np.minimum((u[:, None] > np.cumsum(m, axis=1)).sum(axis=1), 2)
    base = _outcome_base(X)
    g = np.column_stack([base, 5.0 + base, 15.0 * X[:, 8] + base])
    Y = g[np.arange(n), R - 1] + streams["outcome"].standard_normal(n)
    oracle = {"m": m, "g": g, "tau21": g[:, 1] - g[:, 0], "tau31": g[:, 2] - g[:, 0], "tau32": g[:, 2] - g[:, 1]}
    _logger.debug("Generated IRM data: n={} preset={} seed={} arm sizes={}".format(
        n, config.preset, config.seed, np.bincount(R, minlength=4)[1:].tolist()))
    return Dataset(X, Y, regimen=R, oracle=oracle)


def cohort_treatment_spec() -> TreatmentSpec:
    return TreatmentSpec(("ART", "TDF", "HTN"), (InteractionSpec(("ART", "TDF")),))


def gen_cohort(config: CohortSimConfig) -> Dataset:
    """Cohort-shaped data: 19 covariates, 3-level ART (NNRTI reference), binary TDF and HTN"""
    if config.n < MIN_ROWS:
        raise DatasetError("simulated datasets need at least {} rows".format(MIN_ROWS))
    streams = _streams(config.seed)
    n = config.n
    normal = streams["x_normal"].standard_normal((n, 9))
    binary = (streams["x_binary"].random((n, 10)) < np.linspace(0.15, 0.6, 10)).astype(float)
    X = np.hstack([normal, binary])

    art_logits = np.column_stack([np.zeros(n),
                                  -0.5 + 0.4 * X[:, 0] - 0.3 * X[:, 1] + 0.5 * X[:, 9],
                                  0.2 - 0.3 * X[:, 0] + 0.3 * np.tanh(X[:, 2]) + 0.4 * X[:, 10]])
    p_art = special.softmax(art_logits, axis=1)
    u = streams["treatment"].random((n, 3))
    art = np.minimum((u[:, :1] > np.cumsum(p_art, axis=1)).sum(axis=1), 2)
    tdf = (u[:, 1] < special.expit(0.3 + 0.5 * X[:, 3] - 0.4 * X[:, 11])).astype(float)
    htn = (u[:, 2] < special.expit(-1.0 + 0.6 * X[:, 0] + 0.5 * X[:, 12])).astype(float)

    bpi = (art == 1).astype(float)
    dtg = (art == 2).astype(float)
    effects = COHORT_EFFECTS
    mu = (effects["ART[bPI]"] * bpi + effects["ART[DTG]"] * dtg + effects["TDF"] * tdf + effects["HTN"] * htn
          + effects["ART[bPI]:TDF"] * bpi * tdf + effects["ART[DTG]:TDF"] * dtg * tdf
          + 3.0 * X[:, 0] - 2.0 * X[:, 1] ** 2 + 2.0 * np.sin(X[:, 2]) + 1.5 * X[:, 3] * X[:, 4]
          + 2.0 * X[:, 9] - 1.5 * X[:, 13])
    Y = mu + config.noise_sd * streams["outcome"].standard_normal(n)
    names = tuple("x{:02d}".format(j + 1) for j in range(X.shape[1]))
    treatments = (TreatmentColumn("ART", "categorical", art, COHORT_LEVELS, 0),
                  TreatmentColumn("TDF", "binary", tdf),
                  TreatmentColumn("HTN", "binary", htn))
    return Dataset(X, Y, treatments, covariate_names=names, oracle={"mu": mu, "p_art": p_art})


def simulation_config(dataset: Dataset, spec: TreatmentSpec) -> dict:
    """Ingestion config for a simulated dataset, interactions included"""
    config = dataset.ingestion_config()
    config["interactions"] = [list(interaction.factors) for interaction in spec.interactions]
    return config
