"""YAML run configuration: parsing, validation and serialization.

Layout (every block optional except ``model``)::

    model:
      state_terms: [{matrix: [[1, 0], [0, 1]], order: 0}, ...]
      input_terms: [{matrix: [[0], [1]], order: 0}]
      dist_terms:  [{matrix: [[1, 0], [0, 1]], order: 0}]
      b_w: 0.5
    analysis:
      Q: null            # null = identity
      R: null
      theta: 0.5
      theta_hat: 0.5
      c_rho: 0.5
      kappa: null        # null = max(0.9, (1 + c_psi psi) / 2)
      v: null            # null = smallest feasible v <= v_max
      v_max: 64
      b_xr: 1.0
      b_ur: 1.0
    scenario:
      kind: regulate     # regulate | track-fos | track-vapprox
      horizon: 400
      x0: [1, 1]
      disturbance: none  # none | uniform
      seed: 0
      reference:
        u_r: null        # track-fos / track-vapprox input: constant vector or list of rows
        x0: null         # reference (or exogenous) initial state
        source: input    # track-vapprox: input | mpc
    mpc:
      horizon: 20
      c_le: 100000.0
      c_s: 1.0e-05
      w_track: 10.0
      w_input: 1.0
      tracked: 0
      target: [[-10.0, 0.2, 0.0], [3.0, 0.5, 0.0]]   # rows of (amplitude, frequency, phase)
    output:
      dir: out
      prefix: run
      csv: true
      svg: true
"""
from __future__ import annotations

import copy
import math

import numpy as np
import yaml

from .fos_model import FosModel
from .synthesis import AnalysisParams


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": {"state_terms": None, "input_terms": None, "dist_terms": [], "b_w": 0.0},
    "analysis": {"Q": None, "R": None, "theta": 0.5, "theta_hat": 0.5, "c_rho": 0.5,
                 "kappa": None, "v": None, "v_max": 64, "b_xr": 1.0, "b_ur": 1.0},
    "scenario": {"kind": "regulate", "horizon": 400, "x0": None, "disturbance": "none",
                 "seed": 0, "reference": {"u_r": None, "x0": None, "source": "input"}},
    "mpc": {"horizon": 20, "c_le": 1e5, "c_s": 1e-5, "w_track": 10.0, "w_input": 1.0,
            "tracked": 0, "target": [[-10.0, 0.2, 0.0], [3.0, 0.5, 0.0]]},
    "output": {"dir": "out", "prefix": "run", "csv": True, "svg": True},
}
TERM_KEYS = {"matrix", "order"}


def _merge(defaults, given, path):
    if given is None:
        given = {}
    if not isinstance(given, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    out = {}
    for key, dflt in defaults.items():
        val = given.get(key, copy.deepcopy(dflt))
        if isinstance(dflt, dict):
            val = _merge(dflt, given.get(key), f"{path}.{key}")
        out[key] = val
    return out


def _matrix(val, path, rows=None, cols=None):
    try:
        arr = np.atleast_2d(np.array(val, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: not a numeric matrix") from None
    if arr.ndim != 2:
        raise ConfigError(f"{path}: matrix must be a list of rows")
    if rows is not None and arr.shape[0] != rows or cols is not None and arr.shape[1] != cols:
        raise ConfigError(f"{path}: expected shape {(rows, cols)}, got {arr.shape}")
    return arr


def _terms(raw, path):
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of {{matrix, order}} entries")
    out = []
    for i, t in enumerate(raw):
        p = f"{path}[{i}]"
        if not isinstance(t, dict):
            raise ConfigError(f"{p}: expected a mapping")
        extra = set(t) - TERM_KEYS
        if extra:
            raise ConfigError(f"{p}.{sorted(extra)[0]}: unknown key")
        if "matrix" not in t:
            raise ConfigError(f"{p}.matrix: missing")
        order = t.get("order", 0.0)
        if not isinstance(order, (int, float)) or order < 0:
            raise ConfigError(f"{p}.order: must be a non-negative number")
        out.append((_matrix(t["matrix"], f"{p}.matrix"), float(order)))
    return out


def normalize(raw: dict) -> dict:
    """Fill defaults and validate; returns a plain-data configuration dict."""
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at top level")
    cfg = _merge(DEFAULTS, raw, "config")
    m = cfg["model"]
    for key in ("state_terms", "input_terms"):
        if m[key] is None:
            raise ConfigError(f"config.model.{key}: missing")
        _terms(m[key], f"config.model.{key}")
    _terms(m["dist_terms"], "config.model.dist_terms")
    a = cfg["analysis"]
    for key in ("theta", "theta_hat", "c_rho"):
        if not 0 < float(a[key]) < 1:
            raise ConfigError(f"config.analysis.{key}: must lie in (0, 1)")
    if a["v"] is not None and (not isinstance(a["v"], int) or a["v"] < 1):
        raise ConfigError("config.analysis.v: must be a positive integer or null")
    if not isinstance(a["v_max"], int) or a["v_max"] < 1:
        raise ConfigError("config.analysis.v_max: must be a positive integer")
    s = cfg["scenario"]
    if s["kind"] not in ("regulate", "track-fos", "track-vapprox"):
        raise ConfigError(f"config.scenario.kind: unknown kind {s['kind']!r}")
    if s["disturbance"] not in ("none", "uniform"):
        raise ConfigError("config.scenario.disturbance: must be 'none' or 'uniform'")
    if not isinstance(s["horizon"], int) or s["horizon"] < 1:
        raise ConfigError("config.scenario.horizon: must be a positive integer")
    if s["reference"]["source"] not in ("input", "mpc"):
        raise ConfigError("config.scenario.reference.source: must be 'input' or 'mpc'")
    target = cfg["mpc"]["target"]
    if not isinstance(target, list) or any(not isinstance(r, list) or len(r) != 3 for r in target):
        raise ConfigError("config.mpc.target: expected rows of [amplitude, frequency, phase]")
    return cfg


def loads(text: str) -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: YAML syntax error: {exc}") from None
    return normalize(raw)


def load(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def dumps(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None)


def build_model(cfg: dict) -> FosModel:
    m = cfg["model"]
    return FosModel(_terms(m["state_terms"], "config.model.state_terms"),
                    _terms(m["input_terms"], "config.model.input_terms"),
                    _terms(m["dist_terms"], "config.model.dist_terms"),
                    float(m["b_w"]))


def build_params(cfg: dict) -> AnalysisParams:
    a = cfg["analysis"]
    return AnalysisParams(theta=float(a["theta"]), theta_hat=float(a["theta_hat"]),
                          c_rho=float(a["c_rho"]),
                          kappa=None if a["kappa"] is None else float(a["kappa"]),
                          Q=None if a["Q"] is None else _matrix(a["Q"], "config.analysis.Q"),
                          R=None if a["R"] is None else _matrix(a["R"], "config.analysis.R"),
                          b_xr=float(a["b_xr"]), b_ur=float(a["b_ur"]))


def make_target(rows):
    """p_d(k) = sum amplitude * sin(frequency * k + phase)."""
    rows = [tuple(float(x) for x in r) for r in rows]

    def target(k):
        return sum(a * math.sin(f * k + ph) for a, f, ph in rows)

    return target


def example_config(noise: bool = False) -> dict:
    """Configuration for the two-state benchmark system."""
    A = [[1.0, 1.0], [0.0, 1.0]]
    negA = [[-1.0, -1.0], [0.0, -1.0]]
    G = [[1.0, 0.0], [0.0, 1.0]] if noise else [[0.0, 0.0], [0.0, 0.0]]
    raw = {
        "model": {
            "state_terms": [{"matrix": [[1.0, 0.0], [0.0, 1.0]], "order": 0.0},
                            {"matrix": A, "order": 1.7},
                            {"matrix": negA, "order": 0.0}],
            "input_terms": [{"matrix": [[0.0], [1.0]], "order": 0.0}],
            "dist_terms": [{"matrix": G, "order": 0.0}],
            "b_w": 0.5 if noise else 0.0,
        },
        "analysis": {"v_max": 20},
        "scenario": {"x0": [1.0, 1.0], "disturbance": "uniform" if noise else "none"},
    }
    return normalize(raw)
