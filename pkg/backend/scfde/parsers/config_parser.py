# backend/scfde/parsers/config_parser.py
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import ValidationError

from ..errors import ConfigValidationError, ConfigurationError, SchemaError
from ..schemas import ExperimentConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_SECTIONS = {name: field.annotation for name, field in ExperimentConfig.model_fields.items()}


def _check_keys(raw: Dict[str, Any]):
    """Name the first unknown section or key instead of pydantic's generic 'extra' message."""
    for section, body in raw.items():
        if section not in _SECTIONS:
            raise SchemaError(section)
        if not isinstance(body, dict):
            raise ConfigValidationError([section], "expected a [section] table")
        known = _SECTIONS[section].model_fields
        for key in body:
            if key not in known:
                raise SchemaError(key, section)


def parse_config(text: str) -> ExperimentConfig:
    """TOML text -> validated ExperimentConfig. An empty document gives the default experiment."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"config is not valid TOML: {e}") from e
    _check_keys(raw)
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        fields = []
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"])
            if not loc:
                # cross-field checks carry the field name at the front of the message
                loc = err["msg"].split(":")[0].replace("Value error, ", "")
            fields.append(loc)
        raise ConfigValidationError(fields, "; ".join(err["msg"] for err in e.errors())) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


def with_seed(config: ExperimentConfig, seed: Optional[int]) -> ExperimentConfig:
    """Copy of `config` with the simulation seed replaced (None keeps it)."""
    if seed is None:
        return config
    data = config.model_dump(mode="json")
    data["simulation"]["seed"] = seed
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError(["simulation.seed"], str(e)) from e
