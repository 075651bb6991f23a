"""TOML round-trip for the harness config.

Configs are flat top-level key/value pairs named exactly after
HarnessConfig fields. Reading uses the stdlib parser (tomli on 3.10);
writing uses a small emitter restricted to the types a config holds (bool,
int, float, string, and possibly-nested lists), with floats in shortest
repr so parse(emit(cfg)) == cfg exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, fields

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .harness import HarnessConfig

__all__ = ["config_to_toml", "config_from_toml", "load_config", "save_config"]


def _emit(value) -> str:
    # bool check must precede int: bool is an int subclass
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        r = repr(value)
        # TOML floats need a dot or exponent ('inf'/'nan' never appear here)
        return r if ("." in r or "e" in r or "E" in r) else r + ".0"
    if isinstance(value, str):
        return json.dumps(value)  # valid TOML basic string
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in value) + "]"
    raise TypeError(f"cannot serialize config value of type {type(value)!r}")


def config_to_toml(cfg: HarnessConfig) -> str:
    lines = [f"{f.name} = {_emit(getattr(cfg, f.name))}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"


def config_from_toml(text: str) -> HarnessConfig:
    data = tomllib.loads(text)
    known = {f.name: f for f in fields(HarnessConfig)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown config field {key!r}")
        default = getattr(HarnessConfig(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ValueError(f"config field {key!r} must be a boolean")
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)  # accept `lambda_diff = 1`
        kwargs[key] = value
    return HarnessConfig(**kwargs)


def load_config(path) -> HarnessConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_toml(fh.read())


def save_config(cfg: HarnessConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_toml(cfg))
