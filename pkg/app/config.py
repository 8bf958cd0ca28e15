# app/config.py
# Run configuration files: key = value text parsed into a validated RunConfig

import logging
import os
from typing import Any, Dict, Mapping, Optional

from pydantic import ValidationError

from app.exceptions import ConfigurationError, DomainError
from app.schemas.run_config import RunConfig

logger = logging.getLogger(__name__)

QUICK_N_PATHS = 2000
QUICK_DT = 1e-3

_NONE_VALUES = {'', 'none', 'null'}


def read_config_file(path: str) -> Dict[str, str]:
    """Read `key = value` lines; `#` starts a comment."""
    if not os.path.isfile(path):
        raise ConfigurationError(f"configuration file not found: {path}")

    values: Dict[str, str] = {}
    with open(path, 'r', encoding='utf-8') as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split('#', 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition('=')
            key = key.strip().lower().replace('-', '_')
            if not sep or not key:
                raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if key not in RunConfig.model_fields:
                raise ConfigurationError(f"{path}:{lineno}: unknown key '{key}'")
            if key in values:
                logger.warning(f"{path}:{lineno}: '{key}' set twice, keeping the last value")
            values[key] = value.strip()
    return values


def _normalize(values: Mapping[str, Any]) -> Dict[str, Any]:
    cleaned: Dict[str, Any] = {}
    for key, value in values.items():
        if isinstance(value, str) and value.strip().lower() in _NONE_VALUES:
            cleaned[key] = None
        else:
            cleaned[key] = value
    return cleaned


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = '.'.join(str(part) for part in item.get('loc', ())) or 'config'
        parts.append(f"{key}: {item.get('msg', 'invalid value')}")
    return '; '.join(parts)


def check_derived(cfg: RunConfig, subcommand: str) -> None:
    """Build the objects a subcommand derives from the run configuration."""
    try:
        if subcommand == 'govern':
            cfg.governance_config()
        elif subcommand == 'riccati':
            cfg.control_problem()
        elif subcommand in ('simulate', 'loss-dist', 'meanfield'):
            cfg.model_spec()
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration for {subcommand}: {_describe(e)}") from e
    except (ValueError, DomainError) as e:
        raise ConfigurationError(f"invalid configuration for {subcommand}: {e}") from e


def parse_config(path: Optional[str] = None,
                 overrides: Optional[Mapping[str, Any]] = None,
                 subcommand: Optional[str] = None) -> RunConfig:
    """File values, then --quick scaling, then explicit flag overrides.

    Overrides set to None are ignored. With a subcommand, the objects it
    derives are validated as well.
    """
    values: Dict[str, Any] = _normalize(read_config_file(path)) if path else {}
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}

    unknown = sorted(set(flags) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigurationError(f"unknown key '{unknown[0]}'")

    quick = flags.get('quick', values.get('quick', False))
    if str(quick).lower() in ('1', 'true', 'yes', 'on'):
        values['n_paths'] = QUICK_N_PATHS
        values['dt'] = QUICK_DT
        values['quick'] = True
    values.update(flags)

    try:
        cfg = RunConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {_describe(e)}") from e
    if subcommand is not None:
        check_derived(cfg, subcommand)
    return cfg
