"""Experiment configuration: flat ``key = value`` files with bracketed sections."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from ..errors import ConfigError
from ..fields import FIELD_IDS, make_exact_flow

BACKENDS = ("auto", "mollifier", "passthrough")
OMEGA_IDS = ("bump", "zero", "cell")
DATUM_IDS = ("cone", "disk", "bump")


def _floats(text):
    text = str(text).strip()
    if not text:
        return ()
    return tuple(float(v) for v in text.replace(";", ",").split(","))


def _point(text):
    if text is None or str(text).strip() in ("", "none"):
        return None
    vals = _floats(text)
    if len(vals) != 2:
        raise ConfigError(f"expected two coordinates, got {text!r}")
    return vals


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _opt_float(text):
    t = str(text).strip().lower()
    return None if t in ("", "none", "auto") else float(t)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; every key maps to one ``[section] key`` line."""

    # [field]
    field_id: str = "power_rotation"
    alpha: float = 0.36
    p: Optional[float] = 3.0
    omega: float = 1.0
    # [scheme]
    theta: float = 0.2
    tol: float = 1e-13
    max_iterations: int = 60
    time_nodes: int = 4
    classical: bool = False
    # [run]
    h0: float = 1e-3
    levels: int = 3
    T: float = 0.5
    reference: str = "exact"
    output: str = "run"
    seed: int = 0
    workers: int = 1
    dump_points: int = 8
    preset: str = ""
    desk_scale: tuple = ()
    # [region]
    radius: float = 0.05
    cells: int = 64
    point: Optional[tuple] = None
    # [regularization]
    backend: str = "auto"
    beta: Optional[float] = None
    nodes_per_axis: int = 32
    # [blob]
    eps_ladder: tuple = (0.5, 0.35, 0.25)
    omega_id: str = "bump"
    omega_center: tuple = (0.1, 0.05)
    omega_radius: float = 0.8
    cell_cap: int = 1_000_000
    blob_cells: int = 200
    # [transport]
    datum: str = "cone"
    datum_center: tuple = (0.5, 0.0)
    datum_radius: float = 0.4
    deltas: tuple = ()
    times: tuple = ()
    transport_cells: int = 256
    transport_radius: Optional[float] = None

    @property
    def ladder(self):
        return [self.h0 * 2**k for k in range(self.levels + 1)]

    def field_params(self):
        if self.field_id == "power_rotation":
            return {"alpha": self.alpha, "p": self.p}
        if self.field_id == "log_power":
            return {"p": self.p if self.p is not None else 100.0}
        if self.field_id == "rotation":
            return {"omega": self.omega}
        return {}

    def validate(self):
        if self.field_id not in FIELD_IDS:
            raise ConfigError(f"unknown field {self.field_id!r}; expected one of {FIELD_IDS}")
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigError("theta must lie in [0, 1]")
        if not self.h0 > 0 or self.levels < 0 or not self.T > 0:
            raise ConfigError("need h0 > 0, levels >= 0 and T > 0")
        if self.h0 * 2**self.levels > self.T * (1 + 1e-12):
            raise ConfigError(f"ladder top h0 * 2^K = {self.h0 * 2 ** self.levels:g} exceeds T = {self.T:g}")
        if self.h0 * 2**self.levels >= 1:
            raise ConfigError("step sizes must stay below 1")
        if self.reference not in ("exact", "finest"):
            raise ConfigError("reference must be 'exact' or 'finest'")
        if self.reference == "exact" and make_exact_flow(self.field_id, **self.field_params()) is None:
            raise ConfigError(f"field {self.field_id!r} has no exact flow; use reference = finest")
        if self.reference == "finest" and self.levels < 1:
            raise ConfigError("the finest-step reference needs at least two ladder points")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}")
        if self.beta is not None and self.beta < 0:
            raise ConfigError("beta must be non-negative")
        if not self.radius > 0 or self.cells < 1:
            raise ConfigError("region needs radius > 0 and cells >= 1")
        if self.field_id == "power_rotation" and not self.alpha < 1:
            raise ConfigError("power_rotation needs alpha < 1")
        if self.field_id == "log_power" and self.p is not None and not self.p > 1:
            raise ConfigError("log_power needs p > 1")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.omega_id not in OMEGA_IDS:
            raise ConfigError(f"omega must be one of {OMEGA_IDS}")
        if any(not 0 < e < 1 for e in self.eps_ladder):
            raise ConfigError("blob scales must lie in (0, 1)")
        if self.datum not in DATUM_IDS:
            raise ConfigError(f"datum must be one of {DATUM_IDS}")
        if any(d <= 0 for d in self.deltas):
            raise ConfigError("datum smoothing scales must be positive")
        if any(t < 0 or t > self.T for t in self.times):
            raise ConfigError("snapshot times must lie in [0, T]")
        return self

    def echo(self):
        """Resolved configuration in file syntax."""
        lines = []
        for section, keys in SECTIONS.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_format(getattr(self, key))}")
            lines.append("")
        return "\n".join(lines)


SECTIONS = {
    "field": ("field_id", "alpha", "p", "omega"),
    "scheme": ("theta", "tol", "max_iterations", "time_nodes", "classical"),
    "run": ("h0", "levels", "T", "reference", "output", "seed", "workers", "dump_points", "preset", "desk_scale"),
    "region": ("radius", "cells", "point"),
    "regularization": ("backend", "beta", "nodes_per_axis"),
    "blob": ("eps_ladder", "omega_id", "omega_center", "omega_radius", "cell_cap", "blob_cells"),
    "transport": (
        "datum",
        "datum_center",
        "datum_radius",
        "deltas",
        "times",
        "transport_cells",
        "transport_radius",
    ),
}

# short spellings accepted in files
ALIASES = {"id": "field_id", "K": "levels", "omega_field": "omega_id"}

_PARSERS = {
    "alpha": float,
    "p": _opt_float,
    "omega": float,
    "theta": float,
    "tol": float,
    "max_iterations": int,
    "time_nodes": int,
    "classical": _bool,
    "h0": float,
    "levels": int,
    "T": float,
    "seed": int,
    "workers": int,
    "dump_points": int,
    "desk_scale": lambda s: tuple(v.strip() for v in str(s).split(";") if v.strip()),
    "radius": float,
    "cells": int,
    "point": _point,
    "beta": _opt_float,
    "nodes_per_axis": int,
    "eps_ladder": _floats,
    "omega_center": _floats,
    "omega_radius": float,
    "cell_cap": lambda s: int(float(s)),
    "blob_cells": int,
    "datum_center": _floats,
    "datum_radius": float,
    "deltas": _floats,
    "times": _floats,
    "transport_cells": int,
    "transport_radius": _opt_float,
}


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], str):
            return "; ".join(v)
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_value(key, text):
    parser = _PARSERS.get(key, lambda s: str(s).strip())
    try:
        return parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None


def apply_overrides(cfg, overrides):
    """Return ``cfg`` with ``{key: text}`` overrides parsed and applied."""
    known = {f.name for f in fields(ExperimentConfig)}
    changes = {}
    for key, text in overrides.items():
        key = ALIASES.get(key, key)
        if key not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        changes[key] = text if not isinstance(text, str) else parse_value(key, text)
    return replace(cfg, **changes)


def load_config(path_or_text, base=None):
    """Parse a config file (or its text) on top of ``base`` (defaults if omitted)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        if "\n" in str(path_or_text):
            parser.read_string(str(path_or_text))
        else:
            with open(path_or_text) as fh:
                parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    overrides = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, value in parser.items(section):
            key = ALIASES.get(key, key)
            if key not in SECTIONS[section]:
                raise ConfigError(f"key {key!r} does not belong in [{section}]")
            overrides[key] = value
    cfg = apply_overrides(base or ExperimentConfig(), overrides)
    return cfg.validate()


# ---------------------------------------------------------------------------
# presets, with desk-scale substitutions marked

PRESETS = {
    "fig1a": dict(
        field_id="power_rotation", alpha=0.36, p=3.0, theta=0.2, h0=1e-3, levels=3, T=0.5,
        reference="exact", point=(0.01, 0.0), backend="passthrough",
        desk_scale=("h0 = 1e-3 (full scale 1e-4)", "T = 0.5 (assumed)"),
    ),
    "fig1a_far": dict(
        field_id="power_rotation", alpha=0.36, p=3.0, theta=0.2, h0=1e-3, levels=3, T=0.5,
        reference="exact", point=(0.5, 0.0), backend="passthrough",
        desk_scale=("h0 = 1e-3 (full scale 1e-4)", "T = 0.5 (assumed)"),
    ),
    "fig1b": dict(
        field_id="power_rotation", alpha=0.35, p=3.0, theta=0.0, h0=1e-3, levels=3, T=0.5,
        reference="exact", point=(0.01, 0.0), backend="passthrough",
        desk_scale=("h0 = 1e-3 (full scale 1e-4)", "T = 0.5 (assumed)"),
    ),
    "fig1b_far": dict(
        field_id="power_rotation", alpha=0.35, p=3.0, theta=0.0, h0=1e-3, levels=3, T=0.5,
        reference="exact", point=(0.5, 0.0), backend="passthrough",
        desk_scale=("h0 = 1e-3 (full scale 1e-4)", "T = 0.5 (assumed)"),
    ),
    "fig2a": dict(
        field_id="sqrt_sine", theta=0.8, h0=1e-3, levels=3, T=0.5, reference="finest",
        radius=0.05, cells=64, backend="mollifier", beta=0.5,
        desk_scale=("T = 0.5 (assumed)", "initial grid B_0.05 with 64 cells per axis (assumed)"),
    ),
    "fig2b": dict(
        field_id="log_power", p=100.0, theta=0.7, h0=1e-3, levels=3, T=0.5, reference="finest",
        radius=0.05, cells=64, backend="passthrough",
        desk_scale=("T = 0.5 (assumed)", "initial grid B_0.05 with 64 cells per axis (assumed)"),
    ),
    "blob": dict(
        eps_ladder=(0.5, 0.35, 0.25), omega_id="bump", omega_center=(0.1, 0.05), omega_radius=0.8,
    ),
    "transport": dict(
        field_id="rotation", omega=1.0, theta=0.2, h0=1e-3, levels=3, T=1.0, reference="exact",
        datum="cone", datum_center=(0.5, 0.0), datum_radius=0.4, deltas=(0.2, 0.1, 0.05),
        times=(0.5, 1.0), transport_cells=256, transport_radius=1.0,
    ),
}

FULL_SCALE = {
    "fig1a": {"h0": 1e-4},
    "fig1a_far": {"h0": 1e-4},
    "fig1b": {"h0": 1e-4},
    "fig1b_far": {"h0": 1e-4},
}


def preset_config(name, full_scale=False):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    params = dict(PRESETS[name])
    if full_scale:
        params.update(FULL_SCALE.get(name, {}))
        params["desk_scale"] = tuple(m for m in params.get("desk_scale", ()) if not m.startswith("h0"))
    return replace(ExperimentConfig(), preset=name, output=f"run_{name}", **params).validate()


def describe_presets():
    lines = []
    for name in sorted(PRESETS):
        params = ", ".join(f"{k}={_format(v)}" for k, v in PRESETS[name].items() if k != "desk_scale")
        lines.append(f"{name}: {params}")
        for mark in PRESETS[name].get("desk_scale", ()):
            lines.append(f"    desk-scale: {mark}")
    return "\n".join(lines)


def as_dict(cfg):
    return asdict(cfg)
