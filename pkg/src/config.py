"""Environment-driven settings and --config file overrides."""
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

from dotenv import load_dotenv

from .errors import ConfigError

ENV_PREFIX = "LSTM_CCTC_"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class Settings:
    """Process-wide defaults. Command-line flags and --config files override them."""

    seed: int = 42
    grid_scale: float = 1.0
    log_level: str = "WARNING"
    hidden_size: int = 256

    @classmethod
    def from_env(cls, env_file: Optional[Path] = None) -> "Settings":
        """Load `.env` (if present) and read the LSTM_CCTC_* variables."""
        if env_file is not None:
            load_dotenv(dotenv_path=env_file, override=True)
        else:
            load_dotenv()

        settings = cls(
            seed=_env_int("SEED", cls.seed),
            grid_scale=_env_float("GRID_SCALE", cls.grid_scale),
            log_level=os.getenv(ENV_PREFIX + "LOG_LEVEL", cls.log_level).upper(),
            hidden_size=_env_int("HIDDEN_SIZE", cls.hidden_size),
        )
        if settings.log_level not in LOG_LEVELS:
            raise ConfigError(f"must be one of {', '.join(LOG_LEVELS)}", field=ENV_PREFIX + "LOG_LEVEL")
        if settings.grid_scale <= 0:
            raise ConfigError("must be positive", field=ENV_PREFIX + "GRID_SCALE")
        if settings.hidden_size < 1:
            raise ConfigError("must be at least 1", field=ENV_PREFIX + "HIDDEN_SIZE")
        return settings


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(ENV_PREFIX + name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", field=ENV_PREFIX + name)


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(ENV_PREFIX + name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}", field=ENV_PREFIX + name)


def load_config_file(path: Path) -> Dict[str, Any]:
    """Read a JSON object of flag overrides."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="--config")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {e}", field="--config")
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object", field="--config")
    return data


def apply_overrides(namespace: Any, overrides: Dict[str, Any], kinds: Mapping[str, Optional[Callable]]) -> None:
    """Set attributes on an argparse namespace from a --config mapping.

    `kinds` maps each overridable destination to the converter its flag uses
    (`bool` for switches, None for plain strings). Keys may use dashes or
    underscores; unknown keys and values the converter rejects raise ConfigError.
    """
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr not in kinds:
            raise ConfigError(f"unknown option {key!r}", field="--config")
        setattr(namespace, attr, _coerce(key, value, kinds[attr]))


def _coerce(key: str, value: Any, kind: Optional[Callable]) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"expected true or false, got {value!r}", field=key)
    if value is None:
        return None
    if isinstance(value, (bool, list, dict)):
        raise ConfigError(f"expected a single value, got {value!r}", field=key)
    if kind is None or kind is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"expected a string, got {value!r}", field=key)
    if kind is int and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"expected an integer, got {value!r}", field=key)
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid {getattr(kind, '__name__', 'value')} value {value!r}", field=key)
