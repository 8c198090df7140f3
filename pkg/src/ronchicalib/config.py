"""INI configuration with one section per component.

Example::

    [simulate]
    side = 64
    mode = wave
    count = 400

    [em]
    n_candidates = 128
    perturb_sigma = 10

    [benchmark]
    runs = 100
    scenario = mismatch-0.3

Keys are the field names of the matching dataclasses. ``RONCHI_SEED`` and
``RONCHI_OUT`` override the seed and output directory; command-line flags
override both.
"""

import configparser
import os
from dataclasses import fields
from pathlib import Path

from .errors import ConfigError

SECTIONS = ("simulate", "encoder", "gp", "em", "benchmark", "testbed", "ident", "calibrate")


def load(path=None):
    """Parse an INI file into {section: {key: raw string}}."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} does not exist")
        try:
            parser.read(p)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections {unknown}; expected a subset of {SECTIONS}")
    return {s: dict(parser[s]) for s in parser.sections()}


def _convert(raw, kind, key):
    try:
        if kind in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (tuple, "tuple"):
            return tuple(v.strip() for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def typed(section, cls):
    """Keyword arguments for dataclass ``cls`` from a raw section dict."""
    known = {f.name: f for f in fields(cls)}
    out = {}
    for key, raw in section.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} for {cls.__name__}")
        default = known[key].default
        kind = known[key].type if isinstance(known[key].type, type) else type(default)
        if isinstance(default, tuple) and all(isinstance(v, (int, float)) for v in default):
            out[key] = tuple(float(v) for v in _convert(raw, tuple, key))
        else:
            out[key] = _convert(raw, kind, key)
    return out


def build(cls, cfg, section, **overrides):
    kw = typed(cfg.get(section, {}), cls)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_seed(flag, default=0):
    if flag is not None:
        return int(flag)
    env = os.environ.get("RONCHI_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"RONCHI_SEED must be an integer, got {env!r}") from exc
    return default


def resolve_out(flag, default="ronchi-out"):
    if flag is not None:
        return Path(flag)
    env = os.environ.get("RONCHI_OUT")
    return Path(env) if env else Path(default)
