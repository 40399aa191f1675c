"""Declarative experiment configs (TOML) and their validation.

A config file has a top-level ``kind`` plus nested sections; every key is
checked against the schema below and unknown keys are rejected so that a
typo can never silently fall back to a default. Numeric values may be
written as plain numbers or as short arithmetic strings involving ``pi``
(``"pi/2"``, ``"-pi/2"``, ``"2*pi/3"``).
"""

from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
import operator
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from .errors import ConfigError

KINDS = ("continuum_1d", "continuum_nd", "abm", "feasibility", "robustness_sweep", "poisson_check")

# section -> {key: default}; a default of REQUIRED must be supplied
REQUIRED = object()

SCHEMA: dict[str, dict[str, object]] = {
    "grid": {"n": 600, "shape": None},
    "target": {"type": "von_mises", "mu": 0.0, "k": 1.0},
    "kernel": {"L_a": "pi", "L_r": "pi/2", "alpha": 2.0},
    "control": {
        "D": 0.05,
        "K": 1.0,
        "K_FL": 1.0,
        "K_LF": 2.0,
        "Phi_F": 0.4,
        "dt": 1e-3,
        "t_f": 15.0,
        "rho_L_floor": 1e-8,
        "D_followers": None,
    },
    "initial": {"type": "uniform", "M_L": None, "M_F": None, "shift_margin": 0.01},
    "output": {"record_every": 10, "snapshot_times": []},
    "perturbation": {"D_followers_factor": 1.0, "L_a_factor": 1.0, "L_r_factor": 1.0},
    "sweep": {"parameter": "p", "values": [], "leader_mass": None, "rate_scale": 1.0},
    "abm": {
        "n_leaders": 300,
        "n_followers": 300,
        "n_nonplastic": 400,
        "bandwidth": 0.1,
        "kde_method": "binned",
        "weighting": "mass",
        "eps": 1e-6,
        "seeds": 50,
        "seed0": 0,
        "record_every": 100,
    },
    "poisson": {"shape": [64, 64], "tol_recovery": 1e-10, "tol_divergence": 1e-8, "tol_curl": 1e-10},
}

TOP_LEVEL = {"kind", "name", "description", "seed"}

TARGET_TYPES = ("von_mises", "bimodal_von_mises", "von_mises_nd")
INITIAL_TYPES = ("uniform", "steady", "target")

# which sections each kind may use (grid/target/kernel/control/output are shared)
KIND_SECTIONS = {
    "continuum_1d": {"initial"},
    "continuum_nd": {"initial"},
    "abm": {"abm"},
    "feasibility": set(),
    "robustness_sweep": {"initial", "perturbation", "sweep"},
    "poisson_check": {"poisson"},
}
SHARED = {"grid", "target", "kernel", "control", "output"}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
           ast.Pow: operator.pow}
_UNOPS = {ast.USub: operator.neg, ast.UAdd: operator.pos}


def parse_number(value, where: str = "value") -> float:
    """Float from a number or a small arithmetic expression in ``pi``."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, (int, float)):
        out = float(value)
    elif isinstance(value, str):
        try:
            tree = ast.parse(value.strip(), mode="eval")
            out = float(_eval(tree.body))
        except (SyntaxError, ValueError, TypeError, ZeroDivisionError) as exc:
            raise ConfigError(f"{where}: cannot parse {value!r} ({exc})") from None
    else:
        raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")
    if not math.isfinite(out):
        raise ConfigError(f"{where}: value must be finite, got {value!r}")
    return out


def _eval(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
        return node.value
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
        return _UNOPS[type(node.op)](_eval(node.operand))
    raise ValueError("only numbers, pi and + - * / ** are allowed")


def _numbers(value, where):
    if isinstance(value, (list, tuple)):
        return [parse_number(v, f"{where}[{i}]") for i, v in enumerate(value)]
    return parse_number(value, where)


@dataclass
class ExperimentSpec:
    """A validated config: raw tables (defaults filled in) plus helpers."""

    kind: str
    name: str
    sections: dict
    seed: int = 0
    description: str = ""
    source: dict = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def to_dict(self) -> dict:
        """Plain data that round-trips through ``spec_from_dict``."""
        out = {"kind": self.kind, "name": self.name, "seed": self.seed}
        if self.description:
            out["description"] = self.description
        out.update(copy.deepcopy(self.source))
        return out

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def num(self, section: str, key: str):
        v = self.sections[section][key]
        return None if v is None else _numbers(v, f"{section}.{key}")

    def with_overrides(self, **sections) -> "ExperimentSpec":
        """Copy with some section entries replaced, revalidated."""
        raw = self.to_dict()
        for sec, table in sections.items():
            raw.setdefault(sec, {}).update(table)
        return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> ExperimentSpec:
    raw = copy.deepcopy(dict(raw))
    unknown = set(raw) - TOP_LEVEL - set(SCHEMA)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    allowed = SHARED | KIND_SECTIONS[kind]
    sections = {}
    source = {}
    for sec, defaults in SCHEMA.items():
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{sec}] must be a table")
        if given and sec not in allowed:
            raise ConfigError(f"section [{sec}] is not used by kind {kind!r}")
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown keys in [{sec}]: {sorted(bad)}")
        table = {k: copy.deepcopy(v) for k, v in defaults.items()}
        table.update(given)
        sections[sec] = table
        if given:
            source[sec] = given
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}")
    spec = ExperimentSpec(kind, str(raw.get("name", kind)), sections, seed, str(raw.get("description", "")), source)
    validate(spec)
    return spec


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return spec_from_dict(raw)


PRESETS = {
    "fig1": "fig1.toml",
    "fig2a": "fig2a.toml",
    "fig2b": "fig2b.toml",
    "fig3": "fig3.toml",
    "fig4": "fig4.toml",
    "example1": "example1.toml",
    "poisson": "poisson.toml",
}


def load_preset(name: str) -> ExperimentSpec:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    text = resources.files("plasticswarm").joinpath("presets", PRESETS[name]).read_text()
    return spec_from_dict(tomllib.loads(text))


def validate(spec: ExperimentSpec) -> None:
    """Kind-specific checks that need no computation beyond parsing."""
    s = spec.sections
    nd = spec.kind == "continuum_nd"
    grid = s["grid"]
    if nd or spec.kind == "poisson_check":
        shape = grid["shape"] if spec.kind != "poisson_check" else s["poisson"]["shape"]
        if not isinstance(shape, list) or len(shape) not in (2, 3):
            raise ConfigError("nD runs need grid.shape = [n1, n2] or [n1, n2, n3]")
        for n in shape:
            if isinstance(n, bool) or not isinstance(n, int) or n < 8 or n % 2:
                raise ConfigError(f"grid sizes must be even integers >= 8, got {shape}")
    else:
        if grid["shape"] is not None:
            raise ConfigError("grid.shape is only used by continuum_nd runs")
        n = grid["n"]
        if isinstance(n, bool) or not isinstance(n, int) or n < 8 or n % 2:
            raise ConfigError(f"grid.n must be an even integer >= 8, got {n!r}")

    t = s["target"]
    if t["type"] not in TARGET_TYPES:
        raise ConfigError(f"target.type must be one of {TARGET_TYPES}")
    mu = spec.num("target", "mu")
    k = spec.num("target", "k")
    if t["type"] == "bimodal_von_mises" and not (isinstance(mu, list) and len(mu) == 2):
        raise ConfigError("bimodal_von_mises needs target.mu = [mu1, mu2]")
    if t["type"] == "von_mises" and isinstance(mu, list):
        raise ConfigError("von_mises needs a scalar target.mu")
    if (t["type"] == "von_mises_nd") != nd and spec.kind != "poisson_check":
        raise ConfigError("von_mises_nd targets go with continuum_nd runs and vice versa")
    if np.any(np.asarray(k) < 0):
        raise ConfigError("target.k must be >= 0")

    for key in ("L_a", "L_r", "alpha"):
        spec.num("kernel", key)
    c = s["control"]
    for key in c:
        spec.num("control", key)
    if not 0 <= spec.num("control", "Phi_F") < 1:
        raise ConfigError("control.Phi_F must lie in [0, 1)")
    for key in ("dt", "t_f", "K", "K_FL", "K_LF"):
        if not spec.num("control", key) > 0:
            raise ConfigError(f"control.{key} must be > 0")

    out = s["output"]
    re = out["record_every"]
    if isinstance(re, bool) or not isinstance(re, int) or re < 1:
        raise ConfigError("output.record_every must be a positive integer")
    _numbers(out["snapshot_times"], "output.snapshot_times")

    init = s["initial"]
    if init["type"] not in INITIAL_TYPES:
        raise ConfigError(f"initial.type must be one of {INITIAL_TYPES}")
    for key in ("M_L", "M_F", "shift_margin"):
        v = spec.num("initial", key)
        if v is not None and v < 0:
            raise ConfigError(f"initial.{key} must be >= 0")

    if spec.kind == "robustness_sweep":
        sw = s["sweep"]
        if sw["parameter"] != "p":
            raise ConfigError("sweep.parameter must be 'p' (plasticity fraction)")
        vals = _numbers(sw["values"], "sweep.values")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("sweep.values must be a non-empty list")
        if any(not 0 < v < 1 for v in vals):
            raise ConfigError("sweep values of p must lie in (0, 1)")
        lm = spec.num("sweep", "leader_mass")
        if lm is not None and any(not 0 < lm < v for v in vals):
            raise ConfigError("sweep.leader_mass must be below every swept p")
        if not spec.num("sweep", "rate_scale") > 0:
            raise ConfigError("sweep.rate_scale must be > 0")
        for key in s["perturbation"]:
            if not spec.num("perturbation", key) > 0:
                raise ConfigError(f"perturbation.{key} must be > 0")

    if spec.kind == "abm":
        a = s["abm"]
        for key in ("n_leaders", "n_followers", "n_nonplastic", "seeds", "seed0", "record_every"):
            v = a[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"abm.{key} must be a nonnegative integer")
        if a["seeds"] < 1 or a["record_every"] < 1:
            raise ConfigError("abm.seeds and abm.record_every must be >= 1")
        if a["kde_method"] not in ("binned", "exact"):
            raise ConfigError("abm.kde_method must be 'binned' or 'exact'")
        if a["weighting"] not in ("mass", "population"):
            raise ConfigError("abm.weighting must be 'mass' or 'population'")
        if not spec.num("abm", "bandwidth") > 0:
            raise ConfigError("abm.bandwidth must be > 0")
