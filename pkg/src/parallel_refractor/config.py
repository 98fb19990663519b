"""Run configuration shared by every CLI command.

The file is JSON (or YAML when the extension is ``.yaml``/``.yml`` and
PyYAML is installed).  Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .domain import ConstantDensity, Density, ExpressionDensity, GridDensity, domain_from_descriptor
from .errors import ConfigError
from .gridfile import read_grid_file
from .receiver import load_grid_receiver, receiver_from_descriptor

TOP_KEYS = {
    "eps", "receiver", "source", "density", "targets", "balance_rtol", "units",
    "envelope", "solver", "trace", "residual", "a3", "legendre", "mesh",
}
SECTION_KEYS = {
    "solver": {"tol", "max_iter", "grid"},
    "trace": {"rays", "seed", "shards", "threads", "scatter", "f_max"},
    "residual": {"surface", "grid", "box", "f", "g"},
    "a3": {"box", "m0", "samples", "seed", "offset_max", "radius"},
    "legendre": {"points", "grid"},
    "mesh": {"grid"},
}
RECEIVER_KEYS = {
    "plane": {"type", "height", "n", "offset"},
    "paraboloid": {"type", "height", "curvature", "center", "n", "offset"},
    "sphere_cap": {"type", "center", "radius", "concave", "offset"},
    "tilted_plane": {"type", "height", "slope", "offset"},
    "grid": {"type", "path", "offset"},
}
SOURCE_KEYS = {
    "disk": {"type", "center", "radius"},
    "rect": {"type", "lo", "hi"},
    "polygon": {"type", "vertices"},
}
DENSITY_KEYS = {
    "constant": {"type", "value"},
    "expression": {"type", "expr"},
    "grid": {"type", "path"},
}
SURFACE_KEYS = {
    "envelope": {"type"},
    "hyperboloid": {"type", "a", "focus"},
}


def _check_keys(obj: Any, allowed: set, where: str):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a mapping")
    extra = set(obj) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {sorted(extra)}")


def _typed(obj: dict, table: dict, where: str):
    _check_keys(obj, set().union(*table.values()), where)
    kind = obj.get("type")
    if kind not in table:
        raise ConfigError(f"{where}: type must be one of {sorted(table)}, got {kind!r}")
    _check_keys(obj, table[kind], f"{where} ({kind})")


def read_config_file(path: str) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    with open(path) as fh:
        text = fh.read()
    if path.endswith((".yaml", ".yml")):
        try:
            import yaml
        except ImportError as exc:
            raise ConfigError("YAML configs need PyYAML; use JSON instead") from exc
        data = yaml.safe_load(text)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return data


@dataclass
class RunConfig:
    """Validated configuration with paths resolved against the config file's directory."""

    raw: dict
    base: str
    eps: Optional[float] = None
    units: str = "length"
    sections: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str) -> "RunConfig":
        data = read_config_file(path)
        return cls.from_dict(data, os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, data: dict, base: str = ".") -> "RunConfig":
        _check_keys(data, TOP_KEYS, "config")
        for name, keys in SECTION_KEYS.items():
            if name in data:
                _check_keys(data[name], keys, name)
        if "receiver" in data:
            _typed(data["receiver"], RECEIVER_KEYS, "receiver")
        if "source" in data:
            _typed(data["source"], SOURCE_KEYS, "source")
        if "density" in data:
            _typed(data["density"], DENSITY_KEYS, "density")
        if "residual" in data and "surface" in data["residual"]:
            _typed(data["residual"]["surface"], SURFACE_KEYS, "residual.surface")
        if "residual" in data and isinstance(data["residual"].get("f"), dict):
            _typed(data["residual"]["f"], DENSITY_KEYS, "residual.f")
        eps = data.get("eps")
        if eps is not None:
            eps = float(eps)
            if not eps > 1.0:
                raise ConfigError("eps must exceed 1 for the envelope solver")
        return cls(data, base, eps, str(data.get("units", "length")),
                   {k: data.get(k, {}) for k in SECTION_KEYS})

    def path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base, p)

    def require(self, *keys):
        missing = [k for k in keys if k not in self.raw]
        if missing:
            raise ConfigError(f"config is missing required key(s) {missing}")

    def receiver(self):
        self.require("receiver")
        desc = dict(self.raw["receiver"])
        if desc["type"] == "grid":
            desc["path"] = self.path(desc["path"])
            rcv = load_grid_receiver(desc["path"])
            off = float(desc.get("offset", 0.0))
            return rcv.shifted(off) if off else rcv
        return receiver_from_descriptor(desc)

    def domain(self):
        self.require("source")
        return domain_from_descriptor(self.raw["source"])

    def density(self, desc: Optional[dict] = None) -> Density:
        desc = self.raw.get("density", {"type": "constant", "value": 1.0}) if desc is None else desc
        kind = desc["type"]
        if kind == "constant":
            return ConstantDensity(float(desc.get("value", 1.0)))
        if kind == "expression":
            return ExpressionDensity(str(desc["expr"]))
        return load_grid_density(self.path(desc["path"]))

    def targets(self):
        """Target foci ``(N, n+1)`` and weights ``(N,)``."""
        self.require("targets")
        spec = self.raw["targets"]
        if isinstance(spec, dict):
            _check_keys(spec, {"path"}, "targets")
            rows = np.loadtxt(self.path(spec["path"]), ndmin=2, comments="#")
        else:
            rows = np.atleast_2d(np.asarray(spec, dtype=float))
        if rows.shape[1] < 3:
            raise ConfigError("target rows must read 'z ... Z^{n+1} C'")
        return rows[:, :-1], rows[:, -1]


def load_grid_density(path: str) -> GridDensity:
    return GridDensity(*read_grid_file(path))
