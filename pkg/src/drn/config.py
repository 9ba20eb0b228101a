"""Flat ``key = value`` configuration files for :class:`~drn.train.TrainConfig`."""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ContractError
from .train import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ContractError):
    pass


def valid_keys() -> dict[str, object]:
    """Accepted keys and their defaults (those of the full-scale `paper` preset)."""
    return {f.name: f.default for f in dataclasses.fields(TrainConfig)}


def _coerce(key: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_config(text: str) -> dict[str, object]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    keys = valid_keys()
    out: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in keys:
            raise ConfigError(f"line {lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(keys))}")
        out[key] = _coerce(key, raw, keys[key])
    return out


def load_config(path) -> dict[str, object]:
    return parse_config(Path(path).read_text())


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
