# -*- coding: utf-8 -*-
"""
Configuration Loading Utility

Loads the `.env` file that locates run directories and the experiment
database, reads pipeline parameter files (TOML or JSON), applies
`ROOMGRAPH_` environment overrides and maps the result onto typed
dataclasses. Every rejected value is reported as a ConfigError naming the
dotted key path.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import tomllib
import typing
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Type, TypeVar

from dotenv import load_dotenv

from utils.errors import ConfigError

config_logger = logging.getLogger(__name__)

ENV_PREFIX = "ROOMGRAPH_"
ENV_SEPARATOR = "__"
TRUE_WORDS = ("true", "1", "yes", "y", "on")
FALSE_WORDS = ("false", "0", "no", "n", "off")

T = TypeVar("T")


class AppConfig:
    """
    Loads and holds process-level settings from a .env file.

    Looks for .env next to the calling script first, then in its parent
    directory, then falls back to the process environment.

    Attributes:
        PROJECT_ROOT (Path): Directory the .env file was found in (or the script/CWD directory).
        OUTPUT_DIR (Path): Default directory for run outputs (ROOMGRAPH_OUTPUT_DIR, default ./runs).
        LOG_DIR (Path): Directory for log files (ROOMGRAPH_LOG_DIR, default ./logs).
        DB_FILE (Path): DuckDB file for experiment results (ROOMGRAPH_DB_FILE, default <OUTPUT_DIR>/experiments.duckdb).
        env_file_path (Optional[Path]): Path to the loaded .env file, if found.
    """

    def __init__(self, calling_script_path: Optional[Path] = None):
        base = Path(calling_script_path).resolve().parent if calling_script_path else Path.cwd()
        self.PROJECT_ROOT: Path = base
        self.env_file_path: Optional[Path] = None
        for candidate in (base / ".env", base.parent / ".env"):
            if candidate.is_file():
                self.env_file_path = candidate
                self.PROJECT_ROOT = candidate.parent
                break

        if self.env_file_path:
            load_dotenv(dotenv_path=self.env_file_path, override=False)
            config_logger.info(f"Loaded environment variables from: {self.env_file_path}")
        else:
            config_logger.debug(f".env file not found in {base} or {base.parent}; using the process environment")

        self.OUTPUT_DIR: Path = self._path_var("OUTPUT_DIR", self.PROJECT_ROOT / "runs")
        self.LOG_DIR: Path = self._path_var("LOG_DIR", self.PROJECT_ROOT / "logs")
        self.DB_FILE: Path = self._path_var("DB_FILE", self.OUTPUT_DIR / "experiments.duckdb")
        self.DB_FILE_STR: str = str(self.DB_FILE)

    def _path_var(self, key: str, default: Path) -> Path:
        value = self.get_optional_var(ENV_PREFIX + key)
        return Path(value).resolve() if value else default

    # --- Helpers for script-specific variables ---
    def get_optional_var(self, key: str, default: Optional[str] = None) -> Optional[str]:
        """Gets an optional string variable from the environment."""
        return os.environ.get(key, default)

    def get_optional_int(self, key: str, default: Optional[int] = None) -> Optional[int]:
        """Gets an optional integer variable from the environment."""
        val = os.environ.get(key)
        if val is None:
            return default
        try:
            return int(val)
        except ValueError:
            config_logger.warning(f"Could not parse env var '{key}' value '{val}' as int. Using default.")
            return default

    def get_optional_bool(self, key: str, default: bool = False) -> bool:
        """Gets an optional boolean variable from the environment."""
        val = os.environ.get(key, "").lower()
        if val in TRUE_WORDS:
            return True
        if val in FALSE_WORDS:
            return False
        return default


def load_config_file(path: Optional[Path]) -> Dict[str, Any]:
    """Parse a TOML or JSON parameter file; None gives an empty mapping."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".toml":
            with path.open("rb") as handle:
                return tomllib.load(handle)
        if path.suffix.lower() == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: top level must be an object")
            return data
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}") from None
    raise ConfigError(f"unsupported config format '{path.suffix}' (use .toml or .json)")


def _unwrap_optional(tp) -> Tuple[Any, bool]:
    if typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return args[0], True
    return tp, False


def _coerce(value: Any, tp, key: str):
    tp, optional = _unwrap_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError("null is not allowed here", key)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, Mapping):
            raise ConfigError(f"expected a table for section, got {type(value).__name__}", key)
        return build_dataclass(tp, value, key)
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"expected true/false, got {value!r}", key)
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"expected an integer, got {value!r}", key)
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"expected a number, got {value!r}", key)
    if tp is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"expected a string, got {value!r}", key)
    if typing.get_origin(tp) is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", key)
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{key}[{k}]") for k, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"expected {len(args)} values, got {len(value)}", key)
        return tuple(_coerce(v, a, f"{key}[{k}]") for k, (v, a) in enumerate(zip(value, args)))
    return value


def build_dataclass(cls: Type[T], data: Mapping[str, Any], path: str = "") -> T:
    """
    Instantiate `cls` from a (nested) mapping, rejecting unknown keys and ill-typed values.

    Missing keys keep their dataclass defaults.
    """
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    kwargs = {}
    for key, value in data.items():
        dotted = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError("unknown key", dotted)
        kwargs[key] = _coerce(value, hints[key], dotted)
    return cls(**kwargs)


def _parse_env_value(raw: str, tp, key: str):
    tp, optional = _unwrap_optional(tp)
    text = raw.strip()
    if optional and text.lower() in ("", "none", "null"):
        return None
    try:
        if tp is bool:
            if text.lower() in TRUE_WORDS:
                return True
            if text.lower() in FALSE_WORDS:
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        if tp is float:
            return float(text)
        if tp is str:
            return text
        if typing.get_origin(tp) is tuple:
            args = typing.get_args(tp)
            parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
            elem = [args[0]] * len(parts) if len(args) == 2 and args[1] is Ellipsis else list(args)
            if len(elem) != len(parts):
                raise ValueError(text)
            return [_parse_env_value(p, a, key) for p, a in zip(parts, elem)]
    except ValueError:
        raise ConfigError(f"cannot parse environment value {raw!r} as {getattr(tp, '__name__', tp)}", key) from None
    raise ConfigError("this key cannot be set from the environment", key)


def apply_env_overrides(cls: Type, data: Dict[str, Any], environ: Optional[Mapping[str, str]] = None,
                        prefix: str = ENV_PREFIX) -> Dict[str, Any]:
    """
    Merge `PREFIX_SECTION__KEY=value` variables into a config mapping.

    Process-level settings read by AppConfig (OUTPUT_DIR, LOG_DIR, DB_FILE)
    are skipped.
    """
    environ = os.environ if environ is None else environ
    merged = json.loads(json.dumps(data))
    for name in sorted(environ):
        if not name.startswith(prefix) or name[len(prefix):] in ("OUTPUT_DIR", "LOG_DIR", "DB_FILE"):
            continue
        parts = name[len(prefix):].lower().split(ENV_SEPARATOR)
        dotted = ".".join(parts)
        target_cls, node = cls, merged
        for depth, part in enumerate(parts):
            hints = typing.get_type_hints(target_cls)
            if part not in hints:
                raise ConfigError(f"unknown key from environment variable {name}", dotted)
            field_type, _ = _unwrap_optional(hints[part])
            if depth == len(parts) - 1:
                node[part] = _parse_env_value(environ[name], hints[part], dotted)
            elif dataclasses.is_dataclass(field_type):
                node = node.setdefault(part, {})
                target_cls = field_type
            else:
                raise ConfigError(f"'{part}' is not a section", dotted)
        config_logger.debug(f"Config override from environment: {dotted}")
    return merged


def load_typed_config(cls: Type[T], path: Optional[Path] = None,
                      environ: Optional[Mapping[str, str]] = None) -> T:
    """File, then environment overrides, then typed validation."""
    return build_dataclass(cls, apply_env_overrides(cls, load_config_file(path), environ))
