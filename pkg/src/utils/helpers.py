"""
Utility functions for dcscan: configuration loading, validation and logging.
"""

import copy
import os
import logging
from pathlib import Path
from typing import Dict, Any, Optional

import numpy as np
import yaml

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending ``section.key``."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


# Every key a run configuration may carry, with its default.
DEFAULT_CONFIG: Dict[str, Any] = {
    "synthetic": {
        "image_size": 32,
        "num_classes": 2,
        "families": ["vertical", "tilted"],
        "thickness_range": [2, 4],
        "length_range": [12, 24],
        "background": 0.2,
        "foreground": 0.8,
        "noise_sigma": 0.05,
        "num_labeled": 8,
        "num_unlabeled": 56,
        "num_test": 16,
        "seed": 0,
    },
    "augment": {
        "patch_size": "random",
        "alpha": 0.9,
        "blur_sigma": [0.1, 1.0],
        "brightness": [-0.2, 0.2],
        "contrast": [0.8, 1.25],
        "gamma": [0.7, 1.5],
        "seed": 0,
    },
    "network": {
        "in_channels": 1,
        "embed_dim": 8,
        "num_classes": 2,
        "expansion": 2,
        "projector_dim": 16,
        "init_std": 0.1,
    },
    "ssm": {
        "state_dim": 4,
        "dt_rank": 1,
        "dt_init": 0.5,
    },
    "losses": {
        "peak_weight": 0.1,
        "temperature": 0.5,
        "literal_denominator": False,
        "symmetric": False,
        "reduction": "mean",
        "dice_eps": 1.0e-5,
    },
    "trainer": {
        "learning_rate": 0.01,
        "momentum": 0.9,
        "weight_decay": 1.0e-4,
        "batch_size": 24,
        "labeled_batch_size": 12,
        "t_max": 2000,
        "eval_interval": 100,
        "checkpoint_interval": 500,
        "unsup_on_labeled": True,
        "diverse_augment": True,
        "diverse_scan": True,
        "diverse_feature": True,
        "uncertainty_weighting": True,
        "seed": 0,
    },
    "logging": {
        "level": "INFO",
        "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        "file": "logs/dcscan.log",
    },
    "output": {
        "directory": "runs/default",
    },
}


def load_config(config_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Load configuration from a YAML (or flat JSON) file.

    Args:
        config_path: Path to the configuration file; falls back to the
            ``DCSCAN_CONFIG`` environment variable, then ``config/config.yaml``

    Returns:
        Dictionary containing configuration settings
    """
    if config_path is None:
        config_path = os.getenv("DCSCAN_CONFIG", "config/config.yaml")
    try:
        with open(config_path, 'r', encoding='utf-8') as file:
            config = yaml.safe_load(file)
        return config or {}
    except FileNotFoundError:
        raise FileNotFoundError(f"Configuration file not found: {config_path}")
    except yaml.YAMLError as e:
        raise ValueError(f"Error parsing configuration file: {e}")


def _check_type(field: str, value: Any, default: Any) -> None:
    if default is None:
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(field, f"expected a boolean, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(field, f"expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool) and not isinstance(value, int):
            raise ConfigError(field, f"expected an integer, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(field, f"expected a list, got {value!r}")
    elif isinstance(default, str):
        # patch_size accepts either "random" or an integer
        if field == "augment.patch_size" and isinstance(value, int) and not isinstance(value, bool):
            return
        if not isinstance(value, str):
            raise ConfigError(field, f"expected a string, got {value!r}")


def resolve_config(user_config: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """
    Merge a user configuration over ``DEFAULT_CONFIG``.

    Unknown sections and keys are rejected so a typo never silently falls back
    to a default.

    Args:
        user_config: Partial configuration (sections of key/value pairs)

    Returns:
        Fully resolved configuration dictionary
    """
    resolved = copy.deepcopy(DEFAULT_CONFIG)
    if not user_config:
        return resolved
    if not isinstance(user_config, dict):
        raise ConfigError("<root>", "configuration must be a mapping of sections")

    for section, values in user_config.items():
        if section not in DEFAULT_CONFIG:
            raise ConfigError(str(section), "unknown configuration section")
        if not isinstance(values, dict):
            raise ConfigError(str(section), "section must be a mapping")
        for key, value in values.items():
            field = f"{section}.{key}"
            if key not in DEFAULT_CONFIG[section]:
                raise ConfigError(field, "unknown configuration key")
            _check_type(field, value, DEFAULT_CONFIG[section][key])
            resolved[section][key] = copy.deepcopy(value)

    log_level(resolved["logging"]["level"])
    return resolved


def dump_config(config: Dict[str, Any]) -> str:
    """Render a resolved configuration as YAML text that re-parses identically."""
    return yaml.safe_dump(config, sort_keys=True, default_flow_style=False)


def log_level(name: str) -> int:
    """Numeric level for a logging level name such as ``"info"`` or ``"DEBUG"``."""
    level = logging.getLevelName(str(name).upper())
    if not isinstance(level, int):
        raise ConfigError("logging.level", f"unknown logging level {name!r}")
    return level


def setup_logging(config: Optional[Dict[str, Any]] = None) -> None:
    """
    Route dcscan log records to the run log file and to stderr.

    Args:
        config: Resolved configuration; its ``logging`` section supplies the
            level, record format and log file path
    """
    section = (config or DEFAULT_CONFIG)["logging"]
    level = log_level(section["level"])
    log_file = Path(section["file"])
    log_file.parent.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=level,
        format=section["format"],
        handlers=[
            logging.FileHandler(log_file, encoding="utf-8"),
            logging.StreamHandler(),
        ],
    )
    # numpy and scipy RuntimeWarnings land in the same log
    logging.captureWarnings(True)
    logger.debug(f"Logging at {logging.getLevelName(level)} to {log_file}")


def get_worker_count() -> int:
    """
    Worker concurrency cap taken from ``DCSCAN_THREADS``.

    Returns:
        Number of workers (at least 1)
    """
    raw = os.getenv("DCSCAN_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer DCSCAN_THREADS={raw!r}")
        return 1
    return max(1, workers)


def derive_rng(*keys: int) -> np.random.Generator:
    """
    Independent random stream derived from integer keys, e.g. (seed, iteration, index).

    Args:
        keys: Non-negative integers identifying the stream

    Returns:
        A numpy random Generator
    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))
