"""Flat ``key = value`` configuration files with namespaced keys.

Recognized namespaces: ``model.*`` (generator), ``disc.*`` (discriminator),
``train.*`` (optimization), ``infer.*`` (sliding window). Unknown keys are
rejected so typos fail loudly. See the README for the full key inventory.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .models import DiscriminatorConfig, GtnetConfig
from .training import SlidingWindowConfig, TrainConfig


class ConfigError(Exception):
    pass


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        out[key] = value
    return out


def parse_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text())


def _convert(raw: str, ftype, name):
    if ftype is bool or ftype == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{name}: expected boolean, got {raw!r}")
    if ftype is int or ftype == "int":
        return int(raw)
    if ftype is float or ftype == "float":
        return float(raw)
    if ftype is tuple or ftype == "tuple":
        return tuple(int(v) for v in raw.split(","))
    return raw


_NAMESPACES = {
    "model": GtnetConfig,
    "disc": DiscriminatorConfig,
    "train": TrainConfig,
    "infer": SlidingWindowConfig,
}


def _field_types(cls):
    # Optional-int fields carry string annotations under future-imports
    types = {}
    for f in fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        types[f.name] = t
    return types


def build_configs(kv: dict):
    """dict of namespaced keys -> (GtnetConfig, DiscriminatorConfig,
    TrainConfig, SlidingWindowConfig); unknown keys are errors."""
    kwargs = {ns: {} for ns in _NAMESPACES}
    for key, raw in kv.items():
        if "." not in key:
            raise ConfigError(f"key {key!r} missing namespace prefix")
        ns, name = key.split(".", 1)
        if ns not in _NAMESPACES:
            raise ConfigError(f"unknown namespace {ns!r} in key {key!r}")
        cls = _NAMESPACES[ns]
        types = _field_types(cls)
        if name not in types:
            raise ConfigError(f"unknown key {key!r}")
        t = types[name]
        if name in ("d_buckets", "d_h", "stop_at_f1"):
            t = {"d_buckets": "tuple", "d_h": "int", "stop_at_f1": "float"}[name]
        kwargs[ns][name] = _convert(raw, t, key)
    return (GtnetConfig(**kwargs["model"]), DiscriminatorConfig(**kwargs["disc"]),
            TrainConfig(**kwargs["train"]), SlidingWindowConfig(**kwargs["infer"]))


def configs_to_text(gcfg: GtnetConfig, dcfg: DiscriminatorConfig,
                    tcfg: TrainConfig, swc: SlidingWindowConfig = None) -> str:
    lines = []
    for ns, cfg in (("model", gcfg), ("disc", dcfg), ("train", tcfg), ("infer", swc)):
        if cfg is None:
            continue
        for f in fields(cfg):
            val = getattr(cfg, f.name)
            if val is None:
                continue
            if isinstance(val, tuple):
                val = ",".join(str(v) for v in val)
            lines.append(f"{ns}.{f.name} = {val}")
    return "\n".join(lines) + "\n"


def configs_from_text(text: str):
    gcfg, dcfg, tcfg, swc = build_configs(parse_config_text(text))
    return gcfg, dcfg, tcfg
