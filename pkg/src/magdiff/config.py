"""Flat ``key = value`` configuration files layered over built-in defaults."""

from __future__ import annotations

import dataclasses
import types
import typing
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def load_config(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _convert(value: Any, tp, key: str):
    if not isinstance(value, str):
        return value
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value.lower() in ("", "none", "null"):
            return None
        tp = args[0]
    try:
        if tp is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return tp(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot read {value!r} as {getattr(tp, '__name__', tp)}") from None


def build(cls, *layers: Mapping[str, Any]):
    """Instantiate dataclass ``cls``; later layers override earlier ones, defaults underneath."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    merged: dict[str, Any] = {}
    for layer in layers:
        for key, value in layer.items():
            if value is None:
                continue
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = _convert(value, hints[key], key)
    try:
        return cls(**merged)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(obj) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(obj).items())
