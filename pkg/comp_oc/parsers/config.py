# comp_oc/parsers/config.py
from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import logfire
from pydantic import ValidationError

from comp_oc.exceptions import ConfigError
from comp_oc.schemas.config import PipelineConfig

SEED_ENV = "COMP_OC_SEED"


def config_error(e: ValidationError, source: str) -> ConfigError:
    """ConfigError naming every offending field path of a validation failure."""
    fields = [".".join(str(part) for part in err["loc"]) for err in e.errors()]
    messages = "; ".join(
        f"{'.'.join(str(part) for part in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()
    )
    return ConfigError(f"{source}: {messages}", fields)


def read_document(path: Path) -> Dict[str, Any]:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such file")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")


def load_config(
        path: Optional[Path],
        overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[PipelineConfig, Path]:
    """Config from file (or defaults), then COMP_OC_SEED, then explicit overrides.

    Returns the config and the directory that relative instance paths resolve against.
    """
    data: Dict[str, Any] = read_document(path) if path is not None else {}
    base_dir = path.parent if path is not None else Path.cwd()
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            data["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env_seed!r}", ["seed"])
    data.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        logfire.error("invalid config", source=str(path), error=str(e), error_type=type(e).__name__)
        raise config_error(e, str(path) if path is not None else "config")
    return config, base_dir
