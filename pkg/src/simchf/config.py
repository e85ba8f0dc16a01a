from importlib.resources import files
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from omegaconf import OmegaConf, DictConfig, ListConfig
from omegaconf.errors import OmegaConfBaseException
from pydantic import ValidationError

from .types import ConfigError, ExperimentConfig, ModelFamily, ObjectiveConfig, SeedPlan

OBJECTIVE_KEYS = ("p", "H", "k", "M", "weight", "variance_floor")


class SimchfConfig:
    def __init__(self, config_path: str | None = None, seed: int | None = None, threads: int | None = None):
        self._seed = seed
        self._threads = threads
        self._config: DictConfig | ListConfig | None = None

        config: DictConfig | ListConfig | None = None
        if config_path is not None:
            if not Path(config_path).exists():
                raise ConfigError(f"config file not found: {config_path}")
            config = _load(config_path)

        default_path = self.get_config_path()
        if Path(default_path).exists():
            self._config = _load(default_path)
            if config is not None:
                self._config = OmegaConf.merge(self._config, config)
        elif config is not None:
            self._config = config

    @property
    def seed(self) -> int:
        if self._seed is not None:
            return self._seed
        seed = self._config_get("SIMCHF_SEED", "seed")
        if seed is None:
            raise ConfigError("no master seed set in config")
        return int(seed)

    @property
    def threads(self) -> int:
        if self._threads is not None:
            return self._threads
        threads = self._config_get("SIMCHF_THREADS", "threads")
        return int(threads) if threads is not None else 1

    def objective_defaults(self) -> Dict[str, Any]:
        if self._config is None:
            return {}
        section = OmegaConf.select(self._config, "objective")
        return dict(OmegaConf.to_container(section, resolve=True)) if section is not None else {}

    def objective_config(self, overrides: Optional[Dict[str, Any]] = None, master_seed: int | None = None) -> ObjectiveConfig:
        values = self.objective_defaults()
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        seed = self.seed if master_seed is None else master_seed
        try:
            return ObjectiveConfig(seed_plan=SeedPlan(master_seed=seed), **values)
        except ValidationError as e:
            raise ConfigError(f"invalid objective settings: {e}")

    def load_experiment(self, path: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
        """Read a flat key/value experiment file and validate it over the defaults."""
        if not Path(path).exists():
            raise ConfigError(f"experiment file not found: {path}")
        raw = OmegaConf.to_container(_load(path), resolve=True)
        if not isinstance(raw, dict):
            raise ConfigError(f"experiment file {path} must be a key/value mapping")
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})

        try:
            master_seed = int(raw.pop("master_seed", self.seed))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid master_seed in experiment file {path}: {e}")
        objective = self.objective_config({k: raw.pop(k) for k in OBJECTIVE_KEYS if k in raw}, master_seed)
        try:
            model = ModelFamily(kind=raw.pop("model"), innovation=raw.pop("innovation", "gaussian"))
            return ExperimentConfig(model=model, objective=objective, master_seed=master_seed, **raw)
        except KeyError as e:
            raise ConfigError(f"experiment file {path} is missing required key {e}")
        except ValidationError as e:
            raise ConfigError(f"invalid experiment file {path}: {e}")

    def _config_get(self, env_key: str, config_key: str):
        if env_key in os.environ:
            return os.environ.get(env_key)
        if self._config is not None:
            return OmegaConf.select(self._config, config_key)
        return None

    def get_config_path(self):
        # First check if environment variable is set
        if "SIMCHF_CONFIG" in os.environ:
            return os.environ["SIMCHF_CONFIG"]

        # Then look in user home directory
        user_config = Path.home() / ".config" / "simchf" / "config.yaml"
        if user_config.exists():
            return str(user_config)

        # Then look in current directory
        cwd_config = Path.cwd() / "config.yaml"
        if cwd_config.exists():
            return str(cwd_config)

        # Finally, fall back to package resource
        try:
            return str(files("simchf").joinpath("config.yaml"))
        except (ImportError, FileNotFoundError):
            return str(user_config)


def _load(path: str):
    try:
        return OmegaConf.load(path)
    except (OmegaConfBaseException, yaml.YAMLError, OSError, ValueError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")
