import json
import logging
from typing import Any, Optional

TREATMENT_KINDS = ("binary", "categorical", "continuous")
TREATMENT_KEYS = {"name", "kind", "levels", "reference"}


class ConfigError(Exception):
    def __init__(self, text: str) -> None:
        super().__init__(text)


class Config(object):
    _logger = logging.getLogger(__name__)
    filename: Optional[str]
    config: dict
    _default_outcome: str = "Y"
    _default_regimen: str = "R"
    _default_folds: int = 5
    _default_splits: int = 1
    _default_seed: int = 0
    _default_clip_eps: float = 0.01
    _default_threads: int = 1
    _default_learner: dict = {"kind": "boosted_trees"}
    _known_keys = {"outcome", "covariates", "treatments", "interactions", "regimen",
                   "learners", "crossfit", "clip_eps", "threads", "drop_missing", "contrasts"}

    def __init__(self, filename: Optional[str] = None, config: Optional[dict] = None):
        self.filename = filename
        self.config = dict(config) if config is not None else dict()

    def load(self) -> bool:
        """Load a JSON file and return the validation result"""
        if self.filename is None:
            return self.validate()

        self._logger.debug("Loading configuration from {}".format(self.filename))
        with open(self.filename) as json_file:
            try:
                self.config = json.load(json_file)
            except json.JSONDecodeError as e:
                raise ConfigError("{}: not valid JSON ({})".format(self.filename, e))
            return self.validate()

    def validate(self) -> bool:
        """Validate the mandatory configuration elements"""
        if not isinstance(self.config, dict):
            raise ConfigError("configuration must be a JSON object")
        unknown = set(self.config.keys()) - self._known_keys
        if unknown:
            raise ConfigError("unknown configuration keys: {}".format(", ".join(sorted(unknown))))

        names = []
        for entry in self.treatments_config():
            if not isinstance(entry, dict) or "name" not in entry:
                raise ConfigError("every treatment needs a name")
            unknown_keys = set(entry) - TREATMENT_KEYS
            if unknown_keys:
                raise ConfigError("treatment {}: unknown keys {}"
                                  .format(entry["name"], ", ".join(sorted(unknown_keys))))
            kind = entry.get("kind")
            if kind not in TREATMENT_KINDS:
                raise ConfigError("treatment {} has invalid kind {!r}".format(entry["name"], kind))
            if kind != "categorical" and ("levels" in entry or "reference" in entry):
                raise ConfigError("treatment {}: levels/reference only apply to categorical"
                                  .format(entry["name"]))
            if entry["name"] in names:
                raise ConfigError("treatment {} declared twice".format(entry["name"]))
            names.append(entry["name"])

        for factors in self.interactions_config():
            if not isinstance(factors, list) or len(factors) < 2:
                raise ConfigError("interaction {} needs at least two treatments".format(factors))
            for name in factors:
                if name not in names:
                    raise ConfigError("interaction {} names undeclared treatment {}"
                                      .format(factors, name))

        if self.folds() < 1:
            raise ConfigError("crossfit.folds must be at least 1")
        if self.n_splits() < 1:
            raise ConfigError("crossfit.splits must be at least 1")
        if not 0.0 < self.clip_eps() < 0.5:
            raise ConfigError("clip_eps must lie in (0, 0.5)")
        if self.threads() < 1:
            raise ConfigError("threads must be at least 1")
        return True

    def outcome_column(self) -> str:
        """Get the outcome column name"""
        return self.config.get("outcome", Config._default_outcome)

    def covariate_columns(self) -> Optional[list[str]]:
        """Get the covariate columns; None means every otherwise unused column"""
        return self.config.get("covariates")

    def treatments_config(self) -> list[dict]:
        """Return the treatment declarations"""
        return self.config.get("treatments", list())

    def interactions_config(self) -> list[list[str]]:
        """Return the interaction factor lists"""
        return self.config.get("interactions", list())

    def regimen_config(self) -> Optional[dict]:
        """Return the regimen declaration, if any"""
        regimen = self.config.get("regimen")
        if isinstance(regimen, str):
            return {"column": regimen}
        return regimen

    def regimen_column(self) -> str:
        """Get the regimen column name"""
        regimen = self.regimen_config()
        if regimen is None:
            return Config._default_regimen
        return regimen.get("column", Config._default_regimen)

    def learners_config(self) -> dict:
        """Return the learner configuration"""
        return self.config.get("learners", Config._default_learner)

    def crossfit_config(self) -> dict:
        """Return the cross-fitting configuration"""
        return self.config.get("crossfit", dict())

    def folds(self) -> int:
        return int(self.crossfit_config().get("folds", Config._default_folds))

    def n_splits(self) -> int:
        return int(self.crossfit_config().get("splits", Config._default_splits))

    def seed(self) -> int:
        return int(self.crossfit_config().get("seed", Config._default_seed))

    def stratify_on(self) -> Optional[str]:
        return self.crossfit_config().get("stratify")

    def clip_eps(self) -> float:
        return float(self.config.get("clip_eps", Config._default_clip_eps))

    def threads(self) -> int:
        return int(self.config.get("threads", Config._default_threads))

    def drop_missing(self) -> bool:
        return bool(self.config.get("drop_missing", False))

    def contrasts(self) -> bool:
        return bool(self.config.get("contrasts", False))

    def override(self, key: str, value: Any) -> None:
        """Apply a command line override; None leaves the file value in place"""
        if value is None:
            return
        self._logger.debug("Override {} = {}".format(key, value))
        if key in ("folds", "splits", "seed", "stratify"):
            crossfit = dict(self.crossfit_config())
            crossfit[key] = value
            self.config["crossfit"] = crossfit
        else:
            self.config[key] = value

    def resolved(self) -> dict:
        """Return the effective configuration with every default filled in"""
        return {
            "outcome": self.outcome_column(),
            "covariates": self.covariate_columns(),
            "treatments": self.treatments_config(),
            "interactions": self.interactions_config(),
            "regimen": self.regimen_config(),
            "learners": self.learners_config(),
            "crossfit": {"folds": self.folds(), "splits": self.n_splits(),
                         "seed": self.seed(), "stratify": self.stratify_on()},
            "clip_eps": self.clip_eps(),
            "threads": self.threads(),
            "drop_missing": self.drop_missing(),
            "contrasts": self.contrasts(),
        }
