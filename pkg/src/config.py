"""
config.py - Simulator Configuration Module

Run settings for the DMPC simulator. Values come from, in priority order:

    1. Command-line flags (applied by cli.py on top of this layer)
    2. A flat key=value file passed with --config
    3. Environment variables
    4. .env file (via python-dotenv)
    5. Default values defined in this module

Environment variables are read once, when this module is imported. Invalid
values emit a UserWarning and fall back to the default.

Usage:
    from config import Config, load_config_file
    settings = Config.as_dict()
    settings.update(load_config_file(path))
"""

from __future__ import annotations

import os
import warnings
from pathlib import Path
from typing import Any, Callable, Dict, Final

from dotenv import load_dotenv

from dmpc.errors import ConfigError

load_dotenv()

LOG_LEVELS: Final = ("DEBUG", "INFO", "WARNING", "ERROR")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError(text)
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError(text)
    return value


def _at_least_one(text: str) -> float:
    value = float(text)
    if value < 1:
        raise ValueError(text)
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise ValueError(text)
    return value


def _log_level(text: str) -> str:
    level = text.strip().upper()
    if level not in LOG_LEVELS:
        raise ValueError(text)
    return level


# key -> (parser, default)
SETTINGS: Final[Dict[str, tuple[Callable[[str], Any], Any]]] = {
    "cs": (_at_least_one, 8.0),
    "cm": (_at_least_one, 2.0),
    "seed": (_non_negative_int, 0),
    "epsilon": (_positive_float, 0.1),
    "weight_scale": (_positive_int, 1000),
    "verify_every": (_positive_int, 1),
    "m_max": (_non_negative_int, 0),
    "workers": (_non_negative_int, 0),
    "log_level": (_log_level, "WARNING"),
}


def _from_env(key: str) -> Any:
    parser, default = SETTINGS[key]
    name = f"DMPC_{key.upper()}"
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return parser(raw)
    except (ValueError, TypeError):
        warnings.warn(
            f"Invalid {name} value '{raw}', using default {default}",
            UserWarning,
            stacklevel=2,
        )
        return default


class Config:
    """
    Environment-level simulator settings.

    Attributes:
        CS: c_s of the S ≥ c_s·√N rule.
        CM: c_m of the μ ≥ c_m·√N rule.
        SEED: Seed of every random choice in a run.
        EPSILON: Approximation parameter of weighted preprocessing.
        WEIGHT_SCALE: Fixed-point scale of edge weights.
        VERIFY_EVERY: Oracle period of the verify command.
        M_MAX: Peak edge count used for sizing; 0 takes it from the stream.
        WORKERS: Thread pool size for machine steps; 0 or 1 runs sequentially.
        LOG_LEVEL: Root log level of the command line.

    Environment Variables:
        DMPC_CS, DMPC_CM, DMPC_SEED, DMPC_EPSILON, DMPC_WEIGHT_SCALE,
        DMPC_VERIFY_EVERY, DMPC_M_MAX, DMPC_WORKERS, DMPC_LOG_LEVEL

    Example:
        >>> Config.CS
        8.0
    """

    CS: Final[float] = _from_env("cs")
    CM: Final[float] = _from_env("cm")
    SEED: Final[int] = _from_env("seed")
    EPSILON: Final[float] = _from_env("epsilon")
    WEIGHT_SCALE: Final[int] = _from_env("weight_scale")
    VERIFY_EVERY: Final[int] = _from_env("verify_every")
    M_MAX: Final[int] = _from_env("m_max")
    WORKERS: Final[int] = _from_env("workers")
    LOG_LEVEL: Final[str] = _from_env("log_level")

    @classmethod
    def as_dict(cls) -> Dict[str, Any]:
        """Settings keyed like SETTINGS, ready to be overridden."""
        return {key: getattr(cls, key.upper()) for key in SETTINGS}


def load_config_file(path: Path) -> Dict[str, Any]:
    """
    Parse a flat ``key = value`` file.

    Blank lines and ``#`` comments are ignored. Keys are the SETTINGS names;
    dashes are accepted in place of underscores.

    Raises:
        ConfigError: Unknown key, missing '=' or invalid value, naming the line.
    """
    settings: Dict[str, Any] = {}
    with open(path, encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_").lower()
            if key not in SETTINGS:
                raise ConfigError(f"{path}:{line_no}: unknown key '{key}'")
            parser, _ = SETTINGS[key]
            try:
                settings[key] = parser(value)
            except (ValueError, TypeError):
                raise ConfigError(f"{path}:{line_no}: invalid value '{value}' for {key}") from None
    return settings
