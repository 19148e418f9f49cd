"""Experiment configuration: schema, defaults, loading and validation.

Configs are YAML (or JSON) documents. A first-line comment of the form
``# budget: 90 s`` declares the expected wall-clock budget of a run.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .atom import RelaxationRates, StateError
from .ensemble import DetuningGrid, EnsembleError
from .sequence import SequenceError, build_locked_echo, build_stimulated_echo

SCENARIOS = ("fig2a", "fig2bc", "fig3", "custom")
SEQUENCE_AXES = ("delta_T", "T", "t_DW", "t_B1", "r_delay", "mode_overlap")
RATE_AXES = ("T1_opt", "T2_opt", "T1_spin", "T2_spin", "branch_31", "spin_equilibrium")
SWEEP_AXES = SEQUENCE_AXES + RATE_AXES + ("optical_depth", "width_spin")
LABELS = ("D", "W", "R", "B1", "B2")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_per_pulse_num = {"type": "object", "additionalProperties": False, "properties": {k: _num for k in LABELS}}
_per_pulse_shape = {
    "type": "object",
    "additionalProperties": False,
    "properties": {k: {"enum": ["square", "sech", "hard"]} for k in LABELS},
}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "rates": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T1_opt": _pos,
                "T2_opt": _pos,
                "T1_spin": _pos,
                "T2_spin": _pos,
                "branch_31": _num,
                "spin_equilibrium": _num,
                "time_scale": _pos,
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width_opt": {"type": "number", "minimum": 0},
                "n_opt": {"type": "integer", "minimum": 1},
                "width_spin": {"type": "number", "minimum": 0},
                "n_spin": {"type": "integer", "minimum": 1},
                "lineshape": {"enum": ["gaussian", "uniform"]},
                "span": _pos,
            },
        },
        "sequence": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "locking": {"type": "boolean"},
                "geometry": {"enum": ["forward", "backward"]},
                "t_DW": _num,
                "delta_T": _num,
                "t_B1": _num,
                "T": _num,
                "r_delay": _num,
                "half_window": _pos,
                "mode_overlap": _num,
                "areas": _per_pulse_num,
                "durations": _per_pulse_num,
                "shapes": _per_pulse_shape,
                "phases": _per_pulse_num,
            },
        },
        "slab": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "length": _pos,
                "optical_depth": {"type": "number", "minimum": 0},
                "n_z": {"type": "integer", "minimum": 16},
                "data_area": _pos,
                "directions": {
                    "type": "array",
                    "items": {"enum": ["forward", "backward"]},
                    "minItems": 1,
                    "uniqueItems": True,
                },
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "values"],
            "properties": {
                "axis": {"enum": list(SWEEP_AXES)},
                "values": {"type": "array", "items": _num},
            },
        },
        "fit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "with_offset": {"type": "boolean"},
                "split_time": _num,
                "fit_from": _num,
            },
        },
        "jitter": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "shots": {"type": "integer", "minimum": 1},
                "phase_diffusion": {"type": "number", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "traces": {"type": "boolean"},
            },
        },
    },
}

DEFAULTS = {
    "seed": 0,
    "rates": {
        "T1_opt": 160.0,
        "T2_opt": 25.0,
        "T1_spin": 1.0e6,
        "T2_spin": 500.0,
        "branch_31": 1.0,
        "spin_equilibrium": 0.5,
        "time_scale": 1.0,
    },
    "grid": {
        "width_opt": float(2 * np.pi * 2.0),
        "n_opt": 1025,
        "width_spin": float(2 * np.pi * 0.03),
        "n_spin": 17,
        "lineshape": "gaussian",
        "span": 3.5,
    },
    "sequence": {
        "locking": False,
        "geometry": "forward",
        "t_DW": 2.0,
        "delta_T": 28.0,
        "t_B1": 6.0,
        "T": 100.0,
        "r_delay": 2.0,
        "half_window": 1.5,
        "mode_overlap": 1.0,
        "areas": {},
        "durations": {},
        "shapes": {},
        "phases": {},
    },
    "fit": {"enabled": True, "with_offset": False},
    "jitter": {"enabled": False, "shots": 10, "phase_diffusion": 0.0},
    "output": {"dir": "results", "traces": True},
}

SLAB_DEFAULTS = {
    "length": 1.0,
    "optical_depth": 1.0,
    "n_z": 48,
    "data_area": 0.05,
    "directions": ["forward", "backward"],
}

# scenario presets applied before the user's values
PRESETS = {
    "fig2a": {"sequence": {"locking": False}, "sweep": {"axis": "delta_T"}},
    "fig2bc": {"sequence": {"locking": True}, "fit": {"with_offset": True}, "sweep": {"axis": "T"}},
    "fig3": {"sequence": {"locking": True, "geometry": "backward"}, "sweep": {"axis": "optical_depth"}},
    "custom": {},
}


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats such as ``1e6`` as numbers."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[0-9][0-9_]*[eE][-+]?[0-9]+|\.inf|\.Inf|\.INF|\.nan|\.NaN|\.NAN)$""", re.X),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Configuration problem; ``kind`` is 'io', 'schema' or 'physics'."""

    def __init__(self, errors: list, kind: str = "schema"):
        self.errors = list(errors)
        self.kind = kind
        super().__init__("; ".join(f"[{kind}] {e}" for e in self.errors))


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_budget(text: str):
    """Budget in seconds from a ``# budget: N s`` header comment, or None."""
    m = re.search(r"^#\s*budget:\s*([0-9.eE+]+)\s*s", text, re.MULTILINE)
    return float(m.group(1)) if m else None


def load_raw(path) -> tuple:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror or exc}"], "io") from exc
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.load(text, Loader=_Loader)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError([f"cannot parse {path}: {exc}"], "schema") from exc
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping"], "schema")
    return data, text


def schema_errors(data: dict) -> list:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errs = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    out = []
    for e in errs:
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        out.append(f"{where}: {e.message}")
    return out


def normalize(data: dict) -> dict:
    """Fill defaults and scenario presets into a schema-valid mapping."""
    cfg = _merge(DEFAULTS, PRESETS[data["scenario"]])
    if data.get("slab") is not None or data["scenario"] == "fig3":
        cfg["slab"] = dict(SLAB_DEFAULTS)
    cfg = _merge(cfg, data)
    cfg.setdefault("sweep", {})
    cfg["sweep"].setdefault("values", [])
    return cfg


@dataclass
class ExperimentConfig:
    data: dict
    budget: float = None
    source: str = None
    hash: str = field(init=False)

    def __post_init__(self):
        self.hash = config_hash(self.data)

    @property
    def scenario(self) -> str:
        return self.data["scenario"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        if kw.get("seed") is not None:
            d["seed"] = int(kw["seed"])
        if kw.get("out") is not None:
            d["output"]["dir"] = str(kw["out"])
        if kw.get("axis") is not None:
            d["sweep"] = {"axis": kw["axis"], "values": [float(v) for v in kw["values"]]}
        return ExperimentConfig(d, self.budget, self.source)


def canonical(data: dict) -> dict:
    """The part of a config that determines results (output location excluded)."""
    d = copy.deepcopy(data)
    d.pop("output", None)
    d.pop("description", None)
    return d


def config_hash(data: dict) -> str:
    blob = json.dumps(canonical(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def make_rates(cfg: dict) -> RelaxationRates:
    r = dict(cfg["rates"])
    scale = r.pop("time_scale", 1.0)
    return RelaxationRates(**r).scaled(scale)


def make_grid(cfg: dict) -> DetuningGrid:
    return DetuningGrid.build(**cfg["grid"])


def point_config(cfg: dict, value=None) -> dict:
    """Copy of ``cfg`` with the sweep axis set to ``value``."""
    d = copy.deepcopy(cfg)
    if value is None:
        return d
    axis = d["sweep"]["axis"]
    if axis in SEQUENCE_AXES:
        d["sequence"][axis] = float(value)
    elif axis in RATE_AXES:
        d["rates"][axis] = float(value)
    elif axis == "width_spin":
        d["grid"]["width_spin"] = float(value)
    elif axis == "optical_depth":
        if d.get("slab") is None:
            raise ConfigError(["optical_depth sweeps need a slab section"], "physics")
        d["slab"]["optical_depth"] = float(value)
    return d


def make_sequence(cfg: dict, data_phase: float = 0.0, geometry=None):
    s = cfg["sequence"]
    phases = dict(s["phases"])
    phases["D"] = phases.get("D", 0.0) + data_phase
    geometry = geometry or s["geometry"]
    if s["locking"]:
        return build_locked_echo(
            s["t_DW"], s["t_B1"], s["T"], geometry, s["areas"] or None, s["shapes"] or None,
            s["durations"] or None, s["r_delay"], s["half_window"], phases, warn=False,
        )
    seq = build_stimulated_echo(
        s["t_DW"], s["delta_T"], s["areas"] or None, s["shapes"] or None,
        s["durations"] or None, s["half_window"], phases,
    )
    if geometry == "backward":
        raise SequenceError("backward geometry needs locking or a slab section")
    return seq


def physics_errors(cfg: dict) -> list:
    out = []
    try:
        make_rates(cfg)
    except StateError as exc:
        out.append(f"rates: {exc}")
    try:
        make_grid(cfg)
    except EnsembleError as exc:
        out.append(f"grid: {exc}")
    if cfg["grid"]["n_opt"] < 3 and cfg["grid"]["width_opt"] > 0:
        out.append("grid: n_opt must be >= 3 for a broadened line")
    ov = cfg["sequence"]["mode_overlap"]
    if not 0.0 <= ov <= 1.0:
        out.append(f"sequence/mode_overlap: {ov} outside [0, 1]")
    for k in ("branch_31", "spin_equilibrium"):
        v = cfg["rates"][k]
        if not 0.0 <= v <= 1.0:
            out.append(f"rates/{k}: {v} outside [0, 1]")
    values = cfg["sweep"]["values"] or [None]
    for v in values:
        try:
            pc = point_config(cfg, v)
            if pc.get("slab") is None:
                make_sequence(pc)
            else:
                s = pc["slab"]
                if s["optical_depth"] / s["n_z"] > 0.25:
                    out.append(f"slab: optical depth {s['optical_depth']} too large for n_z={s['n_z']}")
                make_sequence(pc, geometry="forward")
            if pc["sequence"]["mode_overlap"] < 0 or pc["sequence"]["mode_overlap"] > 1:
                out.append(f"sweep value {v}: mode_overlap outside [0, 1]")
            make_rates(pc)
        except (SequenceError, StateError, ConfigError) as exc:
            out.append(f"sweep value {v}: {exc}")
    if cfg["jitter"]["enabled"] and cfg.get("slab") is not None:
        out.append("jitter: phase-jitter mode is only available without a slab")
    if cfg["fit"].get("split_time") is not None:
        vals = cfg["sweep"]["values"]
        st = cfg["fit"]["split_time"]
        if vals and not min(vals) < st < max(vals):
            out.append(f"fit/split_time: {st} outside the sweep range")
    return out


def load_config(path) -> ExperimentConfig:
    """Read, schema-check, fill defaults and physics-check a config file."""
    data, text = load_raw(path)
    errs = schema_errors(data)
    if errs:
        raise ConfigError(errs, "schema")
    cfg = normalize(data)
    errs = physics_errors(cfg)
    if errs:
        raise ConfigError(errs, "physics")
    return ExperimentConfig(cfg, read_budget(text), str(path))


def from_mapping(data: dict) -> ExperimentConfig:
    errs = schema_errors(data)
    if errs:
        raise ConfigError(errs, "schema")
    cfg = normalize(data)
    errs = physics_errors(cfg)
    if errs:
        raise ConfigError(errs, "physics")
    return ExperimentConfig(cfg)


def validate_config(path) -> list:
    """Empty list when the config is usable, otherwise tagged error strings."""
    try:
        load_config(path)
    except ConfigError as exc:
        return [f"[{exc.kind}] {e}" for e in exc.errors]
    return []
