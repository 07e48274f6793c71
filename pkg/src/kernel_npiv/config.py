"""Run configuration: YAML files, defaults, overrides and object builders.

Precedence, lowest first: built-in defaults, the config file, ``--set``
overrides, then dedicated command-line flags.  The resolved mapping is what
gets echoed into each run's manifest.
"""

from __future__ import annotations

import copy
import os
from pathlib import Path
from typing import Any

import yaml

from .filters import FilterSpec
from .kernels import KernelSpec
from .oracle import (
    DiscreteInstance,
    load_instance,
    power_link_instance,
    rate_instance,
    reference_instance,
    smooth_cme_instance,
)
from .rates import RateParams

__all__ = [
    "ConfigError",
    "DEFAULTS",
    "OUTPUT_ENV",
    "load_config",
    "resolve_config",
    "apply_override",
    "build_instance",
    "build_filter",
    "build_kernel",
    "build_rate_params",
    "default_output_dir",
]

OUTPUT_ENV = "KERNEL_NPIV_OUTPUT"

DEFAULTS: dict = {
    "scenario": {
        "kind": "discrete",
        "instance": {"builtin": "reference"},
        "confounding_strength": 1.0,
    },
    "kernels": {
        "x": {"family": "gaussian", "lengthscale": 0.2},
        "z": {"family": "gaussian", "lengthscale": 1.0},
    },
    "filter": {"variant": "tikhonov"},
    "schedule": {
        "a": 1.0,
        "c_xi": 1.0,
        "c_lambda": 1.0,
        "xi": 0.01,
        "lambda": 0.01,
        "xi_power": 0.5,
        "lambda_power": 1.0 / 3.0,
        "smoothness": {
            "beta_x": 1.0, "p_x": 1.0, "gamma0": None, "gamma1": None, "c_f": None,
            "beta_z": 2.0, "p_z": 1.0, "alpha_z": 1.0, "gamma": 0.0,
        },
    },
    "experiment": {
        "n_grid": [128, 256, 512, 1024, 2048, 4096],
        "m_grid": [256, 512, 1024, 2048, 4096, 8192],
        "sizes": [500, 2000, 8000],
        "m": 1000,
        "n": 1000,
        "replicates": 20,
        "seed": 0,
        "workers": 1,
        "method": "counts",
        "filters": [{"variant": "tikhonov"}, {"variant": "iterated_tikhonov", "nu": 3},
                    {"variant": "pcr"}],
        "slope_tolerance": 0.25,
        "ordering_slack": 0.05,
        "output_dir": None,
    },
}

_BUILTINS = {
    "reference": reference_instance,
    "rate": rate_instance,
    "smooth_cme": smooth_cme_instance,
    "power_link": power_link_instance,
}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{where}.{k}" if where else str(k)
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}")
        # free-form mappings are replaced, not merged
        if isinstance(base[k], dict) and isinstance(v, dict) and key not in ("scenario.instance", "kernels.x", "kernels.z", "filter"):
            out[k] = _merge(base[k], v, key)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path) -> dict:
    """Parse a YAML config; syntax errors are reported as ``path:line``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{loc}: {getattr(exc, 'problem', exc)}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def apply_override(cfg: dict, assignment: str) -> None:
    """Apply ``dotted.key=value`` in place; ``value`` is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like key.path=value")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: {exc}") from None
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if not isinstance(node, dict) or (parts[-1] not in node and node is not cfg["scenario"]["instance"]):
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def resolve_config(file_cfg: dict | None = None, overrides=(), base_dir=None) -> dict:
    """Defaults merged with a parsed file and ``key=value`` overrides."""
    cfg = _merge(DEFAULTS, file_cfg or {})
    for o in overrides:
        apply_override(cfg, o)
    inst = cfg["scenario"]["instance"]
    if isinstance(inst, dict) and "file" in inst and base_dir is not None:
        p = Path(inst["file"])
        if not p.is_absolute():
            inst["file"] = str(Path(base_dir) / p)
    return cfg


def default_output_dir(cfg: dict) -> Path:
    out = cfg["experiment"].get("output_dir") or os.environ.get(OUTPUT_ENV) or "runs"
    return Path(out)


def build_instance(cfg: dict) -> DiscreteInstance:
    decl = dict(cfg["scenario"]["instance"])
    if "file" in decl:
        path = Path(decl.pop("file"))
        if decl:
            raise ConfigError(f"instance file declaration takes no other keys: {sorted(decl)}")
        if not path.is_file():
            raise ConfigError(f"{path}: instance file not found")
        return load_instance(path)
    name = decl.pop("builtin", None)
    if name not in _BUILTINS:
        raise ConfigError(f"instance needs 'file' or 'builtin' in {sorted(_BUILTINS)}")
    try:
        return _BUILTINS[name](**decl)
    except TypeError as exc:
        raise ConfigError(f"instance {name!r}: {exc}") from None


def build_kernel(decl: dict) -> KernelSpec:
    return KernelSpec.from_dict(decl)


def build_filter(decl: dict) -> FilterSpec:
    return FilterSpec.from_dict(decl)


def build_rate_params(cfg: dict, theory=None) -> RateParams:
    """Rate parameters from the schedule section.

    Link parameters left as ``null`` are taken from ``theory`` (the oracle's
    diagnostic of the instance), rounded to the nearest value allowed by the
    parameter ranges.
    """
    s = dict(cfg["schedule"]["smoothness"])
    for key in ("gamma0", "gamma1", "c_f"):
        if s.get(key) is None:
            if theory is None:
                raise ConfigError(f"schedule.smoothness.{key} must be given")
            s[key] = getattr(theory, "c_f" if key == "c_f" else key)
    s["gamma1"] = max(1.0, float(s["gamma1"]))
    s["gamma0"] = max(float(s["gamma1"]), float(s["gamma0"]))
    s["c_f"] = int(s["c_f"])
    return RateParams(a=float(cfg["schedule"]["a"]), **s)


def dump_yaml(cfg: Any) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)
