"""YAML run configuration: strict schema, line-numbered errors, canonical form.

A config has the sections ``membranes``, ``density``, ``simulation``,
``tests``, ``analysis`` and ``output`` plus the top-level ``dim``. Every
key is checked against :data:`SCHEMA`; unknown keys are errors. The
canonical form (defaults filled in, keys sorted) is hashed for the run
manifest and re-parses to the same model.
"""

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
import yaml

from .analysis import QuadratureConfig, make_test_function
from .errors import ConfigError, SkewMemError
from .radial import skew_coefficients
from .simulate import SimConfig
from .weights import (
    AnalyticFamily,
    WeightField,
    build_membranes,
    geometric_weights,
    logistic_radii,
    make_density,
)

# leaf kinds: float, int, bool, str, floats (list), pairs (list of 2-lists),
# number-or-floats, and free mappings of named parameters ("params")
SCHEMA = {
    "dim": "int",
    "membranes": {
        "m0": "float",
        "gamma_top": "float",
        "gammabar_bottom": "float",
        "inner": "pairs",
        "outer": "pairs",
        "truncation_tolerance": "float",
        "tail_bound": "float",
        "family": {
            "base": "float",
            "k_max": "int",
            "inner_weight": {"base": "float", "amplitude": "float", "ratio": "float"},
            "outer_weight": {"base": "float", "amplitude": "float", "ratio": "float"},
        },
    },
    "density": {"kind": "str", "a": "float", "b": "float", "c": "float"},
    "simulation": {
        "mode": "str",
        "horizon": "float",
        "step": "float",
        "n_paths": "int",
        "seed": "int",
        "shell_eps": "float",
        "x0": "vec",
        "scheme": "str",
        "record_every": "int",
        "keep_increments": "bool",
        "block_size": "int",
        "workers": "int",
    },
    "tests": {
        "crossing": {"membrane": "float", "eps": "float", "upper_eps": "float", "k": "float"},
        "radial_consistency": {"bessel": "bool", "threshold": "float"},
        "reversibility": {"x": "floats", "y": "floats", "bandwidth": "float", "rel_tol": "float"},
        "occupation": {"A": "floats", "B": "floats", "rel_tol": "float"},
    },
    "analysis": {
        "quadrature": {"n_radial": "int", "n_sphere": "int", "mc_samples": "int"},
        "f": "params",
        "g": "params",
        "ibp_tolerance": "float",
        "trace": {"radius": "float", "constant": "str"},
        "growth": {"r_min": "float", "r_max": "float", "n": "int", "fit_fraction": "float"},
        "h1_probe_radii": "floats",
    },
    "output": {"format": "str", "downsample": "int"},
}

DEFAULTS = {
    "dim": 3,
    "membranes": {"m0": 1.0, "gamma_top": 1.0, "gammabar_bottom": 1.0, "truncation_tolerance": 0.0, "tail_bound": 0.05},
    "density": {"kind": "constant"},
    "simulation": {
        "mode": "full", "horizon": 1.0, "step": 1e-3, "n_paths": 1000, "seed": 0, "shell_eps": 0.05,
        "x0": [1.0], "scheme": "bridge", "record_every": 1, "keep_increments": False,
        "block_size": 16384, "workers": 1,
    },
    "tests": {},
    "analysis": {
        "quadrature": {"n_radial": 64, "n_sphere": 16},
        "f": {"kind": "radial_bump", "center": 1.0, "width": 0.5},
        "g": {"kind": "radial_bump", "center": 1.0, "width": 0.75},
        "ibp_tolerance": 1e-6,
        "trace": {"radius": 1.0, "constant": "divergence"},
        "growth": {"r_min": 1.0, "r_max": 1e4, "n": 41, "fit_fraction": 0.5},
        "h1_probe_radii": [0.5, 1.0, 2.0, 4.0],
    },
    "output": {"format": "csv", "downsample": 1},
}

FORMATS = ("csv", "json", "bin")
MODES = ("full", "radial")


def _line(node):
    return node.start_mark.line + 1 if node is not None else None


def _scalar(kind, value, node, path):
    where = ".".join(path)
    try:
        if kind == "float":
            if isinstance(value, bool):
                raise TypeError
            return float(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            return int(value)
        if kind == "bool":
            if not isinstance(value, bool):
                raise TypeError
            return value
        if kind == "str":
            if not isinstance(value, str):
                raise TypeError
            return value
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: expected {kind}, got {value!r}", _line(node)) from None
    raise AssertionError(kind)


def _check(schema, value, node, path):
    """Validate ``value`` (plain data) against ``schema`` using ``node`` for line numbers."""
    where = ".".join(path) or "<root>"
    if isinstance(schema, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping", _line(node))
        children = {}
        if isinstance(node, yaml.MappingNode):
            children = {k.value: (k, v) for k, v in node.value}
        out = {}
        for key, val in value.items():
            knode, vnode = children.get(str(key), (node, node))
            if key not in schema:
                raise ConfigError(f"unknown key {'.'.join(path + [str(key)])!r}", _line(knode))
            out[key] = _check(schema[key], val, vnode, path + [str(key)])
        return out
    if value is None:
        return None
    if schema == "params":
        if not isinstance(value, dict) or "kind" not in value:
            raise ConfigError(f"{where}: expected a mapping with a 'kind'", _line(node))
        return {k: (v if k == "kind" or isinstance(v, list) else float(v)) for k, v in value.items()}
    if schema in ("floats", "vec"):
        if schema == "vec" and not isinstance(value, list):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list of numbers", _line(node))
        items = node.value if isinstance(node, yaml.SequenceNode) else [node] * len(value)
        return [_scalar("float", v, n, path) for v, n in zip(value, items)]
    if schema == "pairs":
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list of [radius, weight] pairs", _line(node))
        items = node.value if isinstance(node, yaml.SequenceNode) else [node] * len(value)
        out = []
        for v, n in zip(value, items):
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError(f"{where}: expected [radius, weight], got {v!r}", _line(n))
            out.append([_scalar("float", v[0], n, path), _scalar("float", v[1], n, path)])
        return out
    return _scalar(schema, value, node, path)


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("f", "g"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_config_text(text):
    """Parse and schema-check YAML text; returns the canonical config mapping."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", mark.line + 1 if mark else None) from None
    if data is None:
        data = {}
    checked = _check(SCHEMA, data, node, [])
    return canonical(_merge(DEFAULTS, checked))


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def canonical(cfg):
    """Deep copy with sorted keys (JSON round trip)."""
    return json.loads(json.dumps(cfg, sort_keys=True))


def config_hash(cfg):
    blob = json.dumps(canonical(cfg), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def apply_overrides(cfg, seed=None, paths=None, step=None, horizon=None, workers=None, fmt=None, membrane=None):
    cfg = canonical(cfg)
    sim = cfg["simulation"]
    for key, val in (("seed", seed), ("n_paths", paths), ("step", step), ("horizon", horizon), ("workers", workers)):
        if val is not None:
            sim[key] = val
    if fmt is not None:
        if fmt not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        cfg["output"]["format"] = fmt
    if membrane is not None:
        cfg["tests"].setdefault("crossing", {})["membrane"] = float(membrane)
    return cfg


@dataclass
class Model:
    """Validated objects built from a canonical config."""

    weight_field: WeightField
    skew: object
    sim: SimConfig
    quadrature: QuadratureConfig
    raw: dict

    @property
    def membranes(self):
        return self.weight_field.membranes


def _family(m):
    fam = m["family"]
    lr, rr = logistic_radii(m["m0"], fam.get("base", 2.0))
    iw = fam.get("inner_weight") or {}
    ow = fam.get("outer_weight") or {}
    return AnalyticFamily(
        m["m0"], lr, geometric_weights(**iw), rr, geometric_weights(**ow), int(fam.get("k_max", 30)),
    )


def build_model(cfg) -> Model:
    """Turn a canonical config into validated model objects."""
    dim = int(cfg["dim"])
    m = cfg["membranes"]
    tol = m.get("truncation_tolerance", 0.0)
    if m.get("family"):
        if m.get("inner") or m.get("outer"):
            raise ConfigError("membranes: give either explicit inner/outer lists or a family, not both")
        ms = build_membranes(_family(m), tol, m.get("tail_bound", 0.05))
    else:
        spec = {k: m[k] for k in ("m0", "gamma_top", "gammabar_bottom") if k in m}
        spec["inner"] = m.get("inner") or ()
        spec["outer"] = m.get("outer") or ()
        ms = build_membranes(spec, tol)
    d = dict(cfg["density"])
    kind = d.pop("kind")
    dm = make_density(kind, dim, **d)
    wf = WeightField(ms, dm)
    s = cfg["simulation"]
    if s["mode"] not in MODES:
        raise ConfigError(f"simulation.mode must be one of {MODES}")
    if cfg["output"]["format"] not in FORMATS:
        raise ConfigError(f"output.format must be one of {FORMATS}")
    x0 = s["x0"]
    sim = SimConfig(
        dim=dim, horizon=s["horizon"], step=s["step"], n_paths=s["n_paths"], seed=s["seed"],
        shell_eps=s["shell_eps"], x0=tuple(x0) if len(x0) > 1 else x0[0], scheme=s["scheme"],
        record_every=s["record_every"], keep_increments=s["keep_increments"],
        block_size=s["block_size"], workers=s["workers"],
    )
    q = cfg["analysis"]["quadrature"]
    qc = QuadratureConfig(q.get("n_radial", 64), q.get("n_sphere", 16), q.get("mc_samples"))
    for key in ("f", "g"):
        p = dict(cfg["analysis"][key])
        make_test_function(p.pop("kind"), **p)
    return Model(wf, skew_coefficients(ms), sim, qc, cfg)


def test_function(cfg, key):
    p = dict(cfg["analysis"][key])
    return make_test_function(p.pop("kind"), **p)


test_function.__test__ = False
