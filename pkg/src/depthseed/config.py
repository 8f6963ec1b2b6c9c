"""Flat ``key=value`` configuration files with last-wins overrides."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Mapping

from .errors import ConfigError


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines are skipped."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{line_no}: empty key")
        values[key.replace("-", "_")] = value
    return values


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def parse_overrides(items: Iterable[str]) -> dict:
    """``["lr=0.1", "epochs=3"]`` -> dict; later entries win."""
    return parse_config_text("\n".join(items), "<overrides>")


def resolve(*layers: Mapping) -> dict:
    """Merge mappings left to right, skipping ``None`` values (last wins)."""
    out = {}
    for layer in layers:
        for key, value in layer.items():
            if value is not None:
                out[key] = value
    return out


def dump_config(values: Mapping) -> str:
    """Sorted ``key=value`` text; the inverse of :func:`parse_config_text` for string values."""
    return "".join(f"{k}={_text(v)}\n" for k, v in sorted(values.items()))


def _text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def as_int(value, key: str = "value") -> int:
    try:
        return int(str(value).strip())
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from exc


def as_float(value, key: str = "value") -> float:
    try:
        return float(str(value).strip())
    except ValueError as exc:
        raise ConfigError(f"{key} must be a number, got {value!r}") from exc


def as_int_list(value, key: str = "value") -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    text = str(value).strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"{key} must be a comma-separated list of integers, got {value!r}") from exc
