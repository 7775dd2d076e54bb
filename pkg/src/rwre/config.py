"""Experiment configuration: loading, schema validation, hashing and defaults."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Optional

import jsonschema
import numpy as np

from ._rng import derive_seed
from .lattice import (EnvironmentField, PerturbationModel, TransitionKernel,
                      make_environment, standard_test_model, symmetric_test_model,
                      uniform_kernel, zero_model)


class ConfigError(ValueError):
    """Configuration file missing, unparsable or failing the schema."""


_POINT = {"type": "array", "items": {"type": "integer"}, "minItems": 1}
_POINTS = {"type": "array", "items": _POINT, "minItems": 1}
_POS_INT = {"type": "integer", "minimum": 1}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_EPS_GRID = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}

SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dimension": {"type": "integer", "minimum": 1, "maximum": 8},
                "base": {"oneOf": [{"const": "uniform"},
                                   {"type": "array", "items": _PROB, "minItems": 2}]},
                "epsilon": {"type": "number", "minimum": 0},
                "atoms": {"oneOf": [
                    {"enum": ["standard", "symmetric", "zero"]},
                    {"type": "array", "minItems": 1, "items": {
                        "type": "object", "additionalProperties": False,
                        "required": ["zeta", "weight"],
                        "properties": {"zeta": {"type": "array", "items": {"type": "number"}},
                                       "weight": _PROB}}}]},
                "seed": {"type": "integer", "minimum": 0},
                "period": {"type": ["integer", "null"], "minimum": 1},
            },
        },
        "velocity": {"type": "object", "additionalProperties": False, "properties": {
            "epsilons": _EPS_GRID, "n_walks": _POS_INT, "n_steps": _POS_INT,
            "burn_in": {"type": "integer", "minimum": 0},
            "compare_expansion": {"type": "boolean"}}},
        "invariant": {"type": "object", "additionalProperties": False, "properties": {
            "window": _POINTS, "n_walks": _POS_INT, "n_steps": _POS_INT,
            "burn_in": {"type": "integer", "minimum": 0},
            "fixed_environment": {"type": "boolean"}}},
        "mudelta": {"type": "object", "additionalProperties": False, "properties": {
            "window": _POINTS, "deltas": {"type": "array", "minItems": 1,
                                          "items": {"type": "number", "exclusiveMinimum": 0,
                                                    "exclusiveMaximum": 1}},
            "patterns": _POINTS, "n_replicas": _POS_INT,
            "reference_walks": _POS_INT, "reference_steps": _POS_INT}},
        "green": {"type": "object", "additionalProperties": False, "properties": {
            "kernel": {"oneOf": [{"enum": ["annealed", "annealed_reversed", "base"]},
                                 {"type": "array", "items": _PROB, "minItems": 2}]},
            "points": _POINTS, "tol": {"type": "number", "exclusiveMinimum": 0},
            "method": {"enum": ["auto", "series", "solve"]}}},
        "jkernel": {"type": "object", "additionalProperties": False, "properties": {
            "kernel": {"oneOf": [{"enum": ["annealed", "annealed_reversed", "base"]},
                                 {"type": "array", "items": _PROB, "minItems": 2}]},
            "points": _POINTS, "tol": {"type": "number", "exclusiveMinimum": 0},
            "n_max": _POS_INT}},
        "expansion": {"type": "object", "additionalProperties": False, "properties": {
            "epsilons": _EPS_GRID, "period": _POS_INT, "order": {"type": "integer", "minimum": 0},
            "window": _POINTS, "tol": {"type": "number", "exclusiveMinimum": 0},
            "convention": {"enum": ["oracle", "literal"]}}},
        "kalikow": {"type": "object", "additionalProperties": False, "properties": {
            "n_starts": _POS_INT}},
        "polycond": {"type": "object", "additionalProperties": False, "properties": {
            "direction": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            "Ls": {"type": "array", "items": {"type": "number", "minimum": 2}, "minItems": 1},
            "M": {"type": "number", "exclusiveMinimum": 0}, "n_runs": {"type": "integer", "minimum": 100},
            "max_steps": _POS_INT}},
        "torus_oracle": {"type": "object", "additionalProperties": False, "properties": {
            "period": _POS_INT, "window": _POINTS}},
        "verify_all": {"type": "object", "additionalProperties": False, "properties": {
            "scale": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}}},
    },
}

DEFAULTS: dict = {
    "seed": 0,
    "environment": {"dimension": 2, "base": "uniform", "epsilon": 0.1, "atoms": "standard",
                    "period": None},
    "velocity": {"n_walks": 200, "n_steps": 100_000, "compare_expansion": True},
    "invariant": {"window": [[0, 0], [1, 0]], "n_walks": 100, "n_steps": 100_000,
                  "fixed_environment": False},
    "mudelta": {"window": [[0, 0], [1, 0]], "deltas": [0.9, 0.99, 0.999], "patterns": [[1, 1]],
                "n_replicas": 20_000, "reference_walks": 200, "reference_steps": 100_000},
    "green": {"kernel": "annealed", "points": [[0, 0], [1, 0], [-1, 0]], "tol": 1e-9,
              "method": "auto"},
    "jkernel": {"kernel": "annealed_reversed", "points": [[1, 0], [-1, 0], [0, 1], [0, -1]],
                "tol": 1e-7, "n_max": 1024},
    "expansion": {"epsilons": [0.02, 0.04, 0.08], "period": 8, "order": 2,
                  "window": [[0, 0], [1, 0]], "tol": 1e-7, "convention": "oracle"},
    "kalikow": {"n_starts": 5},
    "polycond": {"direction": [1, 0], "Ls": [5, 8, 12, 18], "M": 2.0, "n_runs": 20_000,
                 "max_steps": 10_000_000},
    "torus_oracle": {"period": 4, "window": [[0, 0], [1, 0]]},
    "verify_all": {"scale": 1.0},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[str]) -> dict:
    """Read a JSON or TOML config; ``None`` gives an empty override."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = p.read_bytes()
    try:
        if p.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:   # Python < 3.11
                import tomli as tomllib
            return tomllib.loads(text.decode())
        return json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


def validate(cfg: dict) -> None:
    errors = sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(cfg),
                    key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            lines.append(f"{where}: {e.message}")
        raise ConfigError("config validation failed:\n  " + "\n  ".join(lines))


def resolve(user: dict, seed: Optional[int] = None) -> dict:
    """Validate user overrides, merge defaults and apply the seed override."""
    validate(user)
    cfg = _merge(DEFAULTS, user)
    env_seed = os.environ.get("RWRE_SEED")
    if seed is None and env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"RWRE_SEED must be an integer, got {env_seed!r}") from None
    if seed is not None:
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def seeds(cfg: dict) -> dict:
    """Environment and walk seeds derived from the root seed."""
    root = int(cfg["seed"])
    env_seed = cfg["environment"].get("seed")
    return {"root": root,
            "environment": int(env_seed) if env_seed is not None else derive_seed(root, 0),
            "walk": derive_seed(root, 1)}


def build_model(spec, d: int) -> PerturbationModel:
    if spec == "standard":
        return standard_test_model(d)
    if spec == "symmetric":
        return symmetric_test_model(d)
    if spec == "zero":
        return zero_model(d)
    return PerturbationModel(np.array([a["zeta"] for a in spec], dtype=float),
                             [a["weight"] for a in spec])


def build_base(spec, d: int) -> TransitionKernel:
    if spec == "uniform":
        return uniform_kernel(d)
    return TransitionKernel(np.asarray(spec, dtype=float))


def build_environment(cfg: dict, epsilon: Optional[float] = None,
                      period: Any = "config") -> EnvironmentField:
    e = cfg["environment"]
    d = int(e["dimension"])
    base = build_base(e["base"], d)
    model = build_model(e["atoms"], d)
    eps = e["epsilon"] if epsilon is None else epsilon
    per = e.get("period") if period == "config" else period
    return make_environment(base, eps, model, seeds(cfg)["environment"], per)
