"""``key = value`` run-config files.

Keys are :class:`~refinetag.trainer.TrainConfig` field names. ``#`` starts a
comment; blank lines are ignored; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path

from .trainer import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


def parse_lines(lines, source: str = "<config>") -> dict[str, str]:
    values = {}
    for n, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def read_config_file(path: str | Path) -> dict[str, str]:
    with open(path, encoding="utf-8") as f:
        return parse_lines(f, str(path))


def coerce(key: str, value: str, hint) -> object:
    args = typing.get_args(hint)
    optional = type(None) in args
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    if optional and value.lower() in ("", "none", "null"):
        return None
    try:
        if base is bool:
            low = value.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(value)
        if base is int:
            return int(value)
        if base is float:
            return float(value)
        return value
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {getattr(base, '__name__', base)}") from None


def resolve(values: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig from string values, typed by the dataclass annotations."""
    hints = typing.get_type_hints(TrainConfig)
    names = [f.name for f in dataclasses.fields(TrainConfig)]
    unknown = sorted(set(values) - set(names))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    typed = {k: coerce(k, v, hints[k]) for k, v in values.items()}
    try:
        return TrainConfig(**typed)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def dump(config: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        lines.append(f"{f.name} = {'none' if v is None else str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
