"""INI configuration: one section per experiment, plus presets and overrides.

    [sweep]
    widths = 64, 128, 256, 512
    depths = 2, 2
    dims = 2, 1, 1

Every key maps onto a field of the section's dataclass; unknown keys and
unknown sections are rejected.
"""
from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path
from typing import Iterable

from .harness import ConfigError, CurveConfig, HessianConfig, SweepConfig, VerifyConfig

SECTIONS = {"sweep": SweepConfig, "curves": CurveConfig, "hessian": HessianConfig,
            "verify": VerifyConfig}
RUN_KEYS = {"seed", "jobs", "out"}

PRESETS: dict[str, dict[str, dict[str, str]]] = {
    "figure-scale": {"curves": {"m": "10000", "seeds": "1", "directions": "5", "t_max": "3.0"}},
    "smoke": {"sweep": {"widths": "64, 128, 256, 512", "seeds": "2", "directions": "2"},
              "curves": {"m": "4096", "seeds": "2", "directions": "2"},
              "hessian": {"widths": "256, 512", "seeds": "5"},
              "verify": {"widths": "256", "seeds": "20", "tail_trials": "2000"}},
    "deep-blocks": {"sweep": {"depths": "3, 3", "dims": "2, 1, 1"}},
    "three-blocks": {"sweep": {"depths": "2, 2, 2", "dims": "2, 1, 1, 1"}},
}


def _parse(value: str, type_str: str):
    v = value.strip()
    if type_str.endswith("| None"):
        if v.lower() in ("", "none"):
            return None
        type_str = type_str[:-len("| None")].strip()
    if type_str.startswith("tuple"):
        inner = float if "float" in type_str else int
        items = [p.strip() for p in v.split(",") if p.strip()]
        return tuple(inner(p) for p in items)
    if type_str == "int":
        return int(v)
    if type_str == "float":
        return float(v)
    if type_str == "bool":
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    return v


def read_ini(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    cp.read(path)
    return {s: dict(cp[s]) for s in cp.sections()}


def parse_overrides(items: Iterable[str], default_section: str) -> dict[str, dict[str, str]]:
    """``key=value`` or ``section.key=value``."""
    out: dict[str, dict[str, str]] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value: {item!r}")
        key, value = item.split("=", 1)
        section, _, name = key.strip().rpartition(".")
        out.setdefault(section or default_section, {})[name] = value
    return out


def merge(*layers: dict[str, dict[str, str]]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for layer in layers:
        for section, kv in layer.items():
            out.setdefault(section, {}).update(kv)
    return out


def resolve(section: str, path=None, preset: str | None = None, overrides=(),
            seed: int | None = None):
    """Build the dataclass for ``section`` from defaults, preset, file and overrides
    (later layers win).  Returns (config, run_options)."""
    if section not in SECTIONS:
        raise ConfigError(f"unknown section {section!r}")
    layers = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layers.append(PRESETS[preset])
    if path is not None:
        layers.append(read_ini(path))
    layers.append(parse_overrides(overrides, section))
    raw = merge(*layers)
    for name in raw:
        if name not in SECTIONS and name != "run":
            raise ConfigError(f"unknown config section [{name}]")
    run = raw.get("run", {})
    bad = set(run) - RUN_KEYS
    if bad:
        raise ConfigError(f"unknown keys in [run]: {sorted(bad)}")
    cls = SECTIONS[section]
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.get(section, {}).items():
        if key not in fields:
            raise ConfigError(f"unknown key {section}.{key}")
        try:
            kwargs[key] = _parse(value, str(fields[key].type))
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {exc}") from None
    if seed is not None:
        kwargs["master_seed"] = seed
    elif "seed" in run:
        kwargs["master_seed"] = int(run["seed"])
    cfg = cls(**kwargs)
    cfg.validate()
    return cfg, run
