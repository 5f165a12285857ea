"""Experiment configuration: TOML files checked against a fixed schema before any work."""
from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .model import ConfigurationError

_NUM = (int, float)
_FLOATS = "float-list"
_NUM_OR_FLOATS = "num-or-float-list"

GLOBAL_KEYS = {"seed": int, "out": str, "tolerance": _NUM}

SECTIONS = {
    "simulate": {
        "model": str, "n_steps": int, "n_paths": int, "horizon": _NUM, "d": int,
        "hurst": _NUM, "volatility": _NUM, "drift": _NUM, "s0": _NUM_OR_FLOATS,
        "correlation": list,
    },
    "tree": {
        "model": str, "depth": int, "up": _NUM_OR_FLOATS, "down": _NUM, "freeze_prob": _NUM,
        "s0": _NUM_OR_FLOATS, "d": int, "freeze": bool, "top": _NUM, "direction": _FLOATS,
        "both_ways": bool,
    },
    "cps": {"eps": _NUM, "tree": str, "perturb": bool, "bounded": bool},
    "sticky": {"input": str, "t": int, "delta": _NUM, "bundling": str, "radius": _NUM},
    "verify": {"dir": str},
}

SIM_MODELS = ("brownian", "gbm", "fbm", "fbm_exp", "increasing")
TREE_MODELS = ("sticky", "plain", "increasing", "ladder")


class ConfigError(ConfigurationError):
    pass


def _is_num(v) -> bool:
    return isinstance(v, _NUM) and not isinstance(v, bool)


def _check_type(where: str, key: str, value, kind) -> None:
    if kind is _NUM:
        ok = _is_num(value)
    elif kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif kind == _FLOATS:
        ok = isinstance(value, list) and all(_is_num(v) for v in value)
    elif kind == _NUM_OR_FLOATS:
        ok = _is_num(value) or (isinstance(value, list) and all(_is_num(v) for v in value))
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise ConfigError(f"key {key!r} in {where} has invalid value {value!r}")


def validate(raw: dict, command: str | None = None) -> dict:
    """Return ``{"global": {...}, section: {...}}``; unknown keys raise :class:`ConfigError`.

    Keys of ``command``'s own section may also appear at the top level.
    """
    out = {"global": {}}
    for key, value in raw.items():
        if key in SECTIONS and isinstance(value, dict):
            schema = SECTIONS[key]
            for k, v in value.items():
                if k not in schema:
                    raise ConfigError(f"unknown key {k!r} in [{key}]")
                _check_type(f"[{key}]", k, v, schema[k])
            out.setdefault(key, {}).update(value)
        elif key in GLOBAL_KEYS:
            _check_type("the top level", key, value, GLOBAL_KEYS[key])
            out["global"][key] = value
        elif command in SECTIONS and key in SECTIONS[command]:
            _check_type("the top level", key, value, SECTIONS[command][key])
            out.setdefault(command, {})[key] = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    seed = out["global"].get("seed")
    if seed is not None and not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return out


def load(path: str | Path | None, command: str | None = None) -> dict:
    if path is None:
        return validate({}, command)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config {path} is not valid TOML: {e}") from None
    return validate(raw, command)
