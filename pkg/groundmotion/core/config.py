import os
import copy
import logging
from dataclasses import dataclass, field, fields
from typing import Dict, List

import yaml

from .errors import ConfigError
from ..model.networks import ModelConfig
from ..model.training import TrainConfig
from ..fitting.losses import OptimConfig
from ..data.synth import MOTION_KINDS

# Default configuration
DEFAULT_CONFIG = {
    "data": {
        "skeleton": "",
        "kinds": list(MOTION_KINDS),
        "per_kind": 40,
        "duration_s": 3.0,
        "fps": 30.0,
        "noise_sigma": 0.04,
        "world_tilt_deg": 0.0,
        "project_2d": False,
        "camera": {
            "fx": 1000.0,
            "fy": 1000.0,
            "cx": 512.0,
            "cy": 512.0,
            "eye": [0.0, -4.0, 1.0],
            "target": [0.0, 0.0, 1.0],
        },
    },
    "contact": {
        "d_thresh": 0.08,
        "v_thresh": 0.5,
    },
    "model": {f.name: f.default for f in fields(ModelConfig)},
    "training": {f.name: f.default for f in fields(TrainConfig)},
    "fitting": {f.name: f.default for f in fields(OptimConfig) if f.name != "d_thresh"},
    "sample": {
        "frames": 90,
        "count": 4,
        "mode": "mean",
        "start_kind": "stand",
    },
    "eval": {
        "hardest_fraction": 0.01,
    },
    "logging": {
        "level": "INFO",
        "file": "",
    },
    "runtime": {
        "threads": 1,
        "progress": True,
    },
}


def load_config(config_path=None):
    """Defaults merged section by section with a YAML file, if one is given and exists."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if not config_path or not os.path.exists(config_path):
        return config
    try:
        with open(config_path, 'r') as f:
            file_config = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Could not load config '{config_path}': {e}") from e
    if file_config is None:
        return config
    if not isinstance(file_config, dict):
        raise ConfigError(f"Config '{config_path}' must be a mapping of sections.")
    for section in file_config:
        if section in config and isinstance(config[section], dict) and isinstance(file_config[section], dict):
            config[section].update(file_config[section])
        else:
            config[section] = file_config[section]
    return config


def _build(cls, section_name, values, **overrides):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{section_name}': {', '.join(sorted(unknown))}")
    try:
        return cls(**{**values, **overrides})
    except TypeError as e:
        raise ConfigError(f"Invalid '{section_name}' section: {e}") from e


def model_config_from(config) -> ModelConfig:
    return _build(ModelConfig, "model", config["model"])


def train_config_from(config, seed=None) -> TrainConfig:
    overrides = {"seed": seed} if seed is not None else {}
    return _build(TrainConfig, "training", config["training"], **overrides)


def optim_config_from(config, seed=None) -> OptimConfig:
    overrides = {"d_thresh": config["contact"]["d_thresh"]}
    if seed is not None:
        overrides["seed"] = seed
    return _build(OptimConfig, "fitting", config["fitting"], **overrides)


@dataclass
class GeneratorSettings:
    kinds: List[str] = field(default_factory=lambda: list(MOTION_KINDS))
    per_kind: int = 40
    duration_s: float = 3.0
    fps: float = 30.0
    noise_sigma: float = 0.04
    world_tilt_deg: float = 0.0
    project_2d: bool = False
    camera: Dict = field(default_factory=dict)
    skeleton: str = ""
    d_thresh: float = 0.08
    v_thresh: float = 0.5

    def __post_init__(self):
        unknown = [k for k in self.kinds if k not in MOTION_KINDS]
        if unknown:
            raise ConfigError(f"Unknown motion kind(s): {', '.join(unknown)}")
        if self.per_kind < 0 or self.noise_sigma < 0:
            raise ConfigError("data.per_kind and data.noise_sigma must be non-negative.")


def generator_settings_from(config) -> GeneratorSettings:
    return _build(GeneratorSettings, "data", config["data"],
                  d_thresh=config["contact"]["d_thresh"], v_thresh=config["contact"]["v_thresh"])


def configure_logging(config, verbose=False, quiet=False):
    """Routes library loggers to the rich console (and optionally a file)."""
    from rich.logging import RichHandler
    from ..utils.ui import console

    level_name = "DEBUG" if verbose else ("WARNING" if quiet else config["logging"].get("level", "INFO"))
    level = getattr(logging, str(level_name).upper(), None)
    if not isinstance(level, int):
        raise ConfigError(f"Unknown logging level '{level_name}'.")
    root = logging.getLogger("groundmotion")
    root.setLevel(level)
    root.handlers.clear()
    root.addHandler(RichHandler(console=console, show_path=False, markup=False))
    log_file = config["logging"].get("file")
    if log_file:
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(levelname)s %(message)s"))
        root.addHandler(handler)
