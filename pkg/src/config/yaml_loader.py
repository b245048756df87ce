import os
import re
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

import yaml
from pydantic import BaseModel

ModelT = TypeVar("ModelT", bound=BaseModel)

_ENV_PATTERN = re.compile(r"^\$\{?(?P<name>[A-Za-z_][A-Za-z0-9_]*)(?::-(?P<default>[^}]*))?\}?$")


def replace_env_vars(value: Any) -> Any:
    """Replace `$NAME`, `${NAME}` or `${NAME:-default}` by the environment value."""
    if not isinstance(value, str):
        return value
    match = _ENV_PATTERN.match(value.strip())
    if match is None:
        return value
    default = match.group("default")
    return os.getenv(match.group("name"), default if default is not None else value)


def process_dict(config: Optional[Dict[str, Any]]) -> Dict[str, Any]:
    """Recursively process dictionary to replace environment variables."""
    if not config:
        return {}
    result: Dict[str, Any] = {}
    for key, value in config.items():
        if isinstance(value, dict):
            result[key] = process_dict(value)
        elif isinstance(value, list):
            result[key] = [replace_env_vars(item) for item in value]
        else:
            result[key] = replace_env_vars(value)
    return result


_config_cache: Dict[str, Dict[str, Any]] = {}


def load_yaml_config(file_path: str | Path) -> Dict[str, Any]:
    """Load and process a YAML configuration file; a missing file yields {}."""
    key = str(Path(file_path).resolve())
    if not os.path.exists(key):
        return {}

    # 检查缓存中是否已存在配置
    if key in _config_cache:
        return _config_cache[key]

    with open(key, "r", encoding="utf-8") as f:
        config = yaml.safe_load(f)
    if config is not None and not isinstance(config, dict):
        raise ValueError(f"Configuration file {key} must contain a mapping at top level")
    processed_config = process_dict(config)

    _config_cache[key] = processed_config
    return processed_config


def clear_config_cache() -> None:
    _config_cache.clear()


def get_section(
    config: Mapping[str, Any],
    name: str,
    model: Type[ModelT],
    overrides: Optional[Mapping[str, Any]] = None,
) -> ModelT:
    """
    Build a pydantic model from one section of a loaded configuration.

    Precedence is model defaults < YAML section < overrides; override entries
    whose value is None are ignored so unset command-line flags do not mask
    the file.
    """
    merged: Dict[str, Any] = dict(config.get(name) or {})
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    return model.model_validate(merged)
