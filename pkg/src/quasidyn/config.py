"""Run configuration: a YAML file with ``model``, ``analysis``, ``dynamics``,
``jl``, ``bounds``, ``output`` and ``runtime`` blocks.

Unknown keys anywhere are rejected; missing keys take the defaults below.
"""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np
import yaml

from .numbertheory import expand, from_period, golden_mean
from .operator import HALF_LINE, WHOLE_LINE, PotentialSpec


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": {
        "lambda": 2.0,
        "omega": {"surd": "golden"},
        "depth": 40,
        "phase": 0.0,
        "geometry": HALF_LINE,
    },
    "analysis": {
        "level": 10,
        "grid_step": 1e-4,
        "sample_level": 14,
        "n_energies": 200,
        "gordon_nmax": 8,
        "thetas": [0.0, 0.7853981633974483, 1.5707963267948966],
        "fit_level": 18,
        "fit_points": 40,
        "fit_energies": 200,
        "k": None,
        "L0": None,
        "retest_extra": 2,
    },
    "dynamics": {
        "geometry": None,
        "N": 2047,
        "T": {"min": 5.0, "max": 3000.0, "count": 16},
        "p": [0.5, 1.0, 2.0, 3.0, 5.0],
        "routes": ["eigen"],
        "parseval_N": 512,
        "parseval_T": [10.0, 50.0],
    },
    "jl": {
        "n_energies": 50,
        "eps": [0.1, 0.01, 0.001],
        "offset": 0.5,
        "profile_energies": 3,
    },
    "bounds": {
        "p": [1.0, 2.0, 5.0],
        "D_universal": 1.0,
        "kappa_lambda": None,
        "delta": 0.5,
        "outside_c": 0.01,
        "i_over_j": 0.05,
        "I_size": 1024,
    },
    "output": {"directory": "results", "formats": ["csv"]},
    "runtime": {"threads": None},
}

_NULLABLE = {("analysis", "k"), ("analysis", "L0"), ("dynamics", "geometry"), ("bounds", "kappa_lambda"),
             ("runtime", "threads")}


def _merge(defaults, given, path):
    if not isinstance(given, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown key(s) in {'.'.join(path) or 'config'}: {sorted(unknown)}")
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        d = defaults[key]
        if isinstance(d, dict) and key not in ("omega", "T"):
            out[key] = _merge(d, val if val is not None else {}, path + (key,))
        else:
            out[key] = val
    return out


def _positive(cfg, block, key, integer=False):
    v = cfg[block][key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
        raise ConfigError(f"{block}.{key} must be a positive number (got {v!r})")
    if integer and int(v) != v:
        raise ConfigError(f"{block}.{key} must be an integer")


def validate(cfg):
    m = cfg["model"]
    lam = m["lambda"]
    if isinstance(lam, bool) or not isinstance(lam, (int, float)) or lam < 0 or lam > 1e3:
        raise ConfigError("model.lambda must lie in [0, 1000]")
    if not isinstance(m["phase"], (int, float)) or not 0 <= m["phase"] < 1:
        raise ConfigError("model.phase must lie in [0, 1)")
    if m["geometry"] not in (HALF_LINE, WHOLE_LINE):
        raise ConfigError("model.geometry must be 'half' or 'whole'")
    if cfg["dynamics"]["geometry"] not in (None, HALF_LINE, WHOLE_LINE):
        raise ConfigError("dynamics.geometry must be 'half', 'whole' or null")
    om = m["omega"]
    if not isinstance(om, dict) or len(om) != 1 or next(iter(om)) not in ("surd", "period", "coefficients", "value"):
        raise ConfigError("model.omega must have exactly one of: surd, period, coefficients, value")
    for block, key, integer in [("model", "depth", True), ("analysis", "level", True), ("analysis", "grid_step", False),
                                ("analysis", "sample_level", True), ("analysis", "n_energies", True),
                                ("analysis", "fit_level", True), ("analysis", "fit_points", True),
                                ("analysis", "fit_energies", True),
                                ("dynamics", "N", True), ("dynamics", "parseval_N", True),
                                ("jl", "n_energies", True), ("bounds", "delta", False), ("bounds", "I_size", True)]:
        _positive(cfg, block, key, integer)
    if cfg["analysis"]["level"] < 3:
        raise ConfigError("analysis.level must be >= 3")
    T = cfg["dynamics"]["T"]
    if isinstance(T, dict):
        if set(T) != {"min", "max", "count"} or not 0 < T["min"] < T["max"] or int(T["count"]) < 2:
            raise ConfigError("dynamics.T must be a list or {min, max, count} with 0 < min < max")
    elif not isinstance(T, list) or not T or min(T) <= 0:
        raise ConfigError("dynamics.T must be a non-empty list of positive values")
    for block, key in [("dynamics", "p"), ("bounds", "p"), ("jl", "eps")]:
        v = cfg[block][key]
        if not isinstance(v, list) or not v or min(v) <= 0:
            raise ConfigError(f"{block}.{key} must be a non-empty list of positive values")
    if not set(cfg["dynamics"]["routes"]) <= {"eigen", "parseval"} or not cfg["dynamics"]["routes"]:
        raise ConfigError("dynamics.routes must be a subset of [eigen, parseval]")
    k = cfg["analysis"]["k"]
    if k is not None and not 0 < k < 1:
        raise ConfigError("analysis.k must lie in (0, 1)")
    th = cfg["runtime"]["threads"]
    if th is not None and (not isinstance(th, int) or th < 1):
        raise ConfigError("runtime.threads must be a positive integer")
    return cfg


def load(path=None, text=None):
    """Parse and validate; ``path`` or ``text`` (YAML)."""
    try:
        raw = yaml.safe_load(Path(path).read_text() if path is not None else (text or ""))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return validate(_merge(DEFAULTS, raw or {}, ()))


def run_id(cfg, version):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")) + "|" + version
    return hashlib.sha256(blob.encode()).hexdigest()


def continued_fraction(cfg):
    m = cfg["model"]
    om, depth = m["omega"], int(m["depth"])
    kind, val = next(iter(om.items()))
    try:
        if kind == "surd":
            if val != "golden":
                raise ConfigError(f"unknown named surd {val!r} (known: golden)")
            return expand(golden_mean(), depth)
        if kind == "period":
            return from_period(val, depth)
        if kind == "coefficients":
            from .numbertheory import ContinuedFraction
            coeffs = tuple(int(a) for a in val)
            if min(coeffs) < 1:
                raise ConfigError("coefficients must be positive integers")
            x = 0.0
            for a in reversed(coeffs):
                x = 1.0 / (a + x)
            return ContinuedFraction(coeffs, x)
        return expand(float(val), depth)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"model.omega: {exc}") from exc


def potential(cfg, geometry=None):
    m = cfg["model"]
    return PotentialSpec(float(m["lambda"]), continued_fraction(cfg), float(m["phase"]),
                         geometry or m["geometry"])


def T_values(cfg):
    T = cfg["dynamics"]["T"]
    if isinstance(T, dict):
        return np.geomspace(float(T["min"]), float(T["max"]), int(T["count"]))
    return np.asarray(T, dtype=float)
