import logging
from typing import Dict, Optional, Union
from pathlib import Path

from dotenv import dotenv_values
from django.conf import settings

from sclocalize.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

ConfigValue = Union[int, float, str]


def load_config(path: Optional[Union[str, Path]] = None) -> Dict[str, ConfigValue]:
    """
    Merge the SCWLS defaults from settings with an optional key-value file.

    File values are coerced to the type of the default they override.
    """
    defaults = dict(getattr(settings, 'SCWLS', {}))
    if path is None:
        return defaults

    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")

    overrides = dotenv_values(path)
    logger.info(f"Loaded {len(overrides)} config overrides from {path}")

    merged = dict(defaults)
    for key, raw in overrides.items():
        if key not in defaults:
            raise ConfigurationError(f"Unknown config key '{key}' in {path}")
        if raw is None:
            raise ConfigurationError(f"Config key '{key}' has no value in {path}")
        merged[key] = coerce(key, raw, defaults[key])
    return merged


def coerce(key: str, raw: str, default: ConfigValue) -> ConfigValue:
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ('1', 'true', 'yes')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return str(raw)
    except ValueError as e:
        raise ConfigurationError(f"Invalid value for '{key}': {raw!r} ({e})") from e


def get_value(values: Dict[str, ConfigValue], key: str) -> ConfigValue:
    if key in values:
        return values[key]
    defaults = getattr(settings, 'SCWLS', {})
    if key not in defaults:
        raise ConfigurationError(f"Missing config key '{key}'")
    return defaults[key]
