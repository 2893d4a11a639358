"""Run configuration: YAML schema, presets and validation.

Schema (all blocks optional except ``model``)::

    version: 1
    seed: 0               # used by the random-atom preset
    model:
      preset: scalar-exp | two-level-exp | random-atom
      params: {c: 1.0, alpha: 0.0, lam: 1.0, bz: 0.0, dim: 3}
      # or an explicit atom, with coupling given separately
      h_at: [[0, 0], [0, 1]]
    coupling:
      terms: [{c: 1.0, alpha: 0.0, lam: 1.0, matrix: [[0, 1], [1, 0]]}]
      uv_cutoff: null
    compute:
      n_max: 4            # at most 6
      m_max: 2
      nodes: 64
      scale: 1.0
      routes: [direct]    # any of direct, eta
      eta: {eta0: null, levels: 6}
      tolerances: {psi_imag: 1.0e-10}
    oracle:
      modes: 4
      n_max: 3
      order: 2
      coefficients: self-consistent   # or continuum
      lambda: {lo: 1.0e-3, hi: 1.0e-1, points: 9}
    output:
      directory: null     # falls back to $SPINBOSON_OUT, then ./out
      formats: [csv, json]

Matrix entries may be numbers or strings such as ``"1+2j"``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
import yaml

from .model import AtomicModel, RadialCoupling, RadialProfile, scalar_exp, two_level_exp
from .matrix_pt import random_hermitian

OUT_ENV = "SPINBOSON_OUT"
MAX_ORDER = 6


class ConfigError(ValueError):
    """Raised for schema violations; the CLI maps it to exit code 2."""


DEFAULTS: dict = {
    "version": 1,
    "seed": 0,
    "model": {"preset": "scalar-exp", "params": {}},
    "compute": {"n_max": 4, "m_max": 2, "nodes": 64, "scale": 1.0, "routes": ["direct"],
                "eta": {"eta0": None, "levels": 6}, "tolerances": {"psi_imag": 1e-10}},
    "oracle": {"modes": 4, "n_max": 3, "order": 2, "coefficients": "self-consistent",
               "lambda": {"lo": 1e-3, "hi": 1e-1, "points": 9}},
    "output": {"directory": None, "formats": ["csv", "json"]},
}

PRESET_NAMES = ("scalar-exp", "two-level-exp", "random-atom")


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _matrix(obj, name) -> np.ndarray:
    try:
        rows = [[complex(str(x).replace(" ", "")) if isinstance(x, str) else complex(x) for x in row]
                for row in obj]
        m = np.array(rows, dtype=complex)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{name}: cannot read matrix ({err})") from None
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ConfigError(f"{name}: expected a square matrix, got shape {m.shape}")
    return m.real if not np.any(m.imag) else m


@dataclass
class RunConfig:
    raw: dict
    model: AtomicModel
    coupling: RadialCoupling
    seed: int = 0

    @property
    def compute(self) -> dict:
        return self.raw["compute"]

    @property
    def oracle(self) -> dict:
        return self.raw["oracle"]

    @property
    def output(self) -> dict:
        return self.raw["output"]

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def out_dir(self, override: Optional[str] = None) -> str:
        return override or self.output.get("directory") or os.environ.get(OUT_ENV) or "out"


def _positive(value, name, integer=False, minimum=None):
    if integer:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    elif isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    lo = minimum if minimum is not None else 0
    if (value < lo) if minimum is not None else not value > 0:
        raise ConfigError(f"{name} must be {'>= ' + str(lo) if minimum is not None else '> 0'}, got {value!r}")
    return value


def _build_model(raw: dict, seed: int):
    m = raw["model"]
    if not isinstance(m, dict):
        raise ConfigError("model block must be a mapping")
    if "h_at" in m:
        atom = AtomicModel(_matrix(m["h_at"], "model.h_at"))
        cblock = raw.get("coupling")
        if not cblock or "terms" not in cblock:
            raise ConfigError("an explicit atom needs a coupling block with terms")
        terms = []
        for i, t in enumerate(cblock["terms"]):
            try:
                prof = RadialProfile(float(t.get("c", 1.0)), float(t.get("alpha", 0.0)), float(t.get("lam", 1.0)))
                terms.append((prof, _matrix(t["matrix"], f"coupling.terms[{i}].matrix")))
            except KeyError:
                raise ConfigError(f"coupling.terms[{i}] needs a matrix") from None
        try:
            return atom, RadialCoupling(tuple(terms), cblock.get("uv_cutoff"))
        except ValueError as err:
            raise ConfigError(str(err)) from None
    preset = m.get("preset")
    params = dict(m.get("params") or {})
    if preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {preset!r}; choose one of {', '.join(PRESET_NAMES)}")
    base = {k: float(params.pop(k)) for k in ("c", "alpha", "lam") if k in params}
    if preset == "scalar-exp":
        out = scalar_exp(**base)
    elif preset == "two-level-exp":
        out = two_level_exp(**base, bz=float(params.pop("bz", 0.0)))
    else:
        dim = int(params.pop("dim", 3))
        if dim < 1:
            raise ConfigError("random-atom needs dim >= 1")
        rng = np.random.default_rng(seed)
        h = random_hermitian(rng, dim)
        B = random_hermitian(rng, dim)
        B /= max(np.linalg.norm(B, 2), 1e-300)
        prof = RadialProfile(base.get("c", 1.0), base.get("alpha", 0.0), base.get("lam", 1.0))
        out = AtomicModel(h - np.linalg.eigvalsh(h)[0] * np.eye(dim)), RadialCoupling(((prof, B),))
    if params:
        raise ConfigError(f"unknown preset parameters: {sorted(params)}")
    uv = (raw.get("coupling") or {}).get("uv_cutoff")
    if uv is not None:
        out = out[0], RadialCoupling(out[1].terms, float(uv))
    return out


def _check(raw: dict):
    c = raw["compute"]
    _positive(c["n_max"], "compute.n_max", integer=True, minimum=0)
    if c["n_max"] > MAX_ORDER:
        raise ConfigError(f"compute.n_max must be <= {MAX_ORDER}, got {c['n_max']}")
    _positive(c["m_max"], "compute.m_max", integer=True, minimum=0)
    _positive(c["nodes"], "compute.nodes", integer=True, minimum=8)
    _positive(c["scale"], "compute.scale")
    routes = c["routes"]
    if isinstance(routes, str):
        routes = c["routes"] = [routes]
    if not routes or any(r not in ("direct", "eta") for r in routes):
        raise ConfigError(f"compute.routes must be a non-empty subset of [direct, eta], got {routes!r}")
    eta = c["eta"]
    if eta.get("eta0") is not None:
        _positive(eta["eta0"], "compute.eta.eta0")
    _positive(eta["levels"], "compute.eta.levels", integer=True, minimum=4)
    for k, v in (c.get("tolerances") or {}).items():
        _positive(v, f"compute.tolerances.{k}")
    o = raw["oracle"]
    _positive(o["modes"], "oracle.modes", integer=True, minimum=1)
    _positive(o["n_max"], "oracle.n_max", integer=True, minimum=0)
    _positive(o["order"], "oracle.order", integer=True, minimum=0)
    if o["coefficients"] not in ("self-consistent", "continuum"):
        raise ConfigError("oracle.coefficients must be 'self-consistent' or 'continuum'")
    lg = o["lambda"]
    _positive(lg["lo"], "oracle.lambda.lo")
    _positive(lg["hi"], "oracle.lambda.hi")
    _positive(lg["points"], "oracle.lambda.points", integer=True, minimum=2)
    if not lg["lo"] < lg["hi"]:
        raise ConfigError("oracle.lambda.lo must be below oracle.lambda.hi")
    fmts = raw["output"]["formats"]
    if not fmts or any(f not in ("csv", "json") for f in fmts):
        raise ConfigError("output.formats must be a non-empty subset of [csv, json]")


def parse_config(data: Any, seed: Optional[int] = None, preset: Optional[str] = None) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(data) - set(DEFAULTS) - {"coupling"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    raw = _merge(DEFAULTS, data)
    if "model" in data and "h_at" in data["model"]:
        raw["model"].pop("preset", None)
        raw["model"].pop("params", None)
    if preset is not None:
        raw["model"] = {"preset": preset, "params": {}}
    if seed is not None:
        raw["seed"] = int(seed)
    seed_val = raw["seed"] = int(raw["seed"])
    try:
        _check(raw)
    except (KeyError, TypeError) as err:
        raise ConfigError(f"malformed configuration: {err}") from None
    try:
        model, coupling = _build_model(raw, seed_val)
    except ConfigError:
        raise
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from None
    return RunConfig(raw, model, coupling, seed_val)


def load_config(path: Optional[str], seed: Optional[int] = None, preset: Optional[str] = None) -> RunConfig:
    """Read a YAML file (``None`` means all defaults)."""
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read {path}: {err}") from None
        except yaml.YAMLError as err:
            raise ConfigError(f"{path} is not valid YAML: {err}") from None
    return parse_config(data, seed, preset)
