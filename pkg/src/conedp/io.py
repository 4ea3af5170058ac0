"""Problem files: JSON schema, loading, canonical hashing and bundled problems."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .cones import ConePair, OrderingCone
from .control import ControlProblem
from .dp import GridConfig
from .tolerances import ENUMERATION_CAP

__all__ = [
    "SCHEMA_VERSION",
    "PROBLEM_SCHEMA",
    "ProblemFileError",
    "ProblemFile",
    "canonical_json",
    "problem_hash",
    "load_problem",
    "parse_problem",
    "bundled_problems",
    "bundled_path",
    "to_jsonable",
    "write_json",
]

SCHEMA_VERSION = 1

_number = {"type": "number"}
_vector = {"type": "array", "items": _number, "minItems": 1}
_matrix = {"type": "array", "items": _vector, "minItems": 1}
_map = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"enum": ["linear", "bilinear", "polynomial", "trig", "sum"]}},
}
_cone = {
    "type": "object",
    "required": ["generators"],
    "properties": {"dim": {"type": "integer", "minimum": 1}, "generators": _matrix},
    "additionalProperties": False,
}

PROBLEM_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "problem", "cone", "grid"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "problem": {
            "type": "object",
            "required": ["state_dim", "cost_dim", "controls", "horizon", "dynamics", "running_cost", "constants"],
            "additionalProperties": False,
            "properties": {
                "state_dim": {"type": "integer", "minimum": 1},
                "cost_dim": {"type": "integer", "minimum": 1},
                "controls": _matrix,
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "dynamics": _map,
                "running_cost": _map,
                "constants": {
                    "type": "object",
                    "required": ["K_f", "M_f", "K_L", "M_L"],
                    "additionalProperties": False,
                    "properties": {
                        "K_f": {"type": "number", "exclusiveMinimum": 0},
                        "M_f": {"type": "number", "minimum": 0},
                        "K_L": {"type": "number", "minimum": 0},
                        "M_L": {"type": "number", "minimum": 0},
                    },
                },
                "name": {"type": "string"},
            },
        },
        "cone": _cone,
        "cone_outer": _cone,
        "grid": {
            "type": "object",
            "required": ["step", "box", "spacing"],
            "additionalProperties": False,
            "properties": {
                "step": {"type": "number", "exclusiveMinimum": 0},
                "box": {"type": "array", "items": {"type": "array", "items": _number, "minItems": 2,
                                                   "maxItems": 2}, "minItems": 1},
                "spacing": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, _vector]},
                "interpolation": {"enum": ["nearest", "corners"]},
                "eps_front": {"type": "number", "minimum": 0},
                "substeps": {"type": "integer", "minimum": 1},
                "queries": {"type": "array", "items": _vector},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "estimates": {"type": "number", "exclusiveMinimum": 0},
                "dpp": {"type": "number", "exclusiveMinimum": 0},
                "tan": {"type": "number", "exclusiveMinimum": 0},
                "c_tan": {"type": "number", "exclusiveMinimum": 0},
                "polarity": {"type": "number", "exclusiveMinimum": 0},
                "pass_rate": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "seeds": {
            "type": "object",
            "additionalProperties": {"type": "integer", "minimum": 0},
        },
        "verify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_probes": {"type": "integer", "minimum": 1},
                "n_pairs": {"type": "integer", "minimum": 1},
                "n_hull": {"type": "integer", "minimum": 0},
                "dpp_k_steps": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "max_triples": {"type": "integer", "minimum": 1},
                "proximal_nodes": {"type": "integer", "minimum": 1},
            },
        },
        "cap": {"type": "integer", "minimum": 1},
    },
}

DEFAULT_TOLERANCES = {"estimates": 1e-6, "c_tan": 2.0, "polarity": 1e-8, "pass_rate": 0.95}
DEFAULT_SEEDS = {"probes": 0, "hull": 0, "lipschitz": 0, "normals": 0}
DEFAULT_VERIFY = {"n_probes": 100, "n_pairs": 1000, "n_hull": 8, "dpp_k_steps": [1], "max_triples": 2000,
                  "proximal_nodes": 40}


class ProblemFileError(ValueError):
    """Malformed or inconsistent problem file."""


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def problem_hash(data: dict) -> str:
    """sha256 of the canonical JSON encoding (key order and whitespace do not matter)."""
    return hashlib.sha256(canonical_json(data).encode("ascii")).hexdigest()


@dataclass
class ProblemFile:
    raw: dict
    problem: ControlProblem
    cone: OrderingCone
    grid: GridConfig
    cone_outer: OrderingCone | None = None
    tolerances: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    cap: int = ENUMERATION_CAP
    path: str | None = None

    @property
    def name(self) -> str:
        return self.raw.get("name") or self.problem.name or "problem"

    @property
    def hash(self) -> str:
        return problem_hash(self.raw)

    @property
    def pair(self) -> ConePair | None:
        return None if self.cone_outer is None else ConePair(self.cone, self.cone_outer)


def parse_problem(data: dict, path: str | None = None) -> ProblemFile:
    """Validate against the schema and build the typed objects."""
    try:
        jsonschema.validate(data, PROBLEM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ProblemFileError(f"schema error at {where}: {exc.message}") from None
    try:
        prob = ControlProblem.from_dict({**data["problem"], "name": data.get("name", "")})
        cone = OrderingCone.from_dict(data["cone"])
        outer = OrderingCone.from_dict(data["cone_outer"]) if "cone_outer" in data else None
        grid = GridConfig.from_dict(data["grid"])
    except (ValueError, KeyError, TypeError) as exc:
        raise ProblemFileError(str(exc)) from None
    if cone.dim != prob.cost_dim:
        raise ProblemFileError(f"cone dimension {cone.dim} differs from cost_dim {prob.cost_dim}")
    if len(grid.box) != prob.state_dim or len(grid.spacing) != prob.state_dim:
        raise ProblemFileError("grid box and spacing must have one entry per state coordinate")
    if any(len(q) != prob.state_dim for q in grid.queries):
        raise ProblemFileError("query states must match state_dim")
    if outer is not None:
        if outer.dim != cone.dim:
            raise ProblemFileError("cone_outer dimension differs from cone")
        try:
            ConePair(cone, outer)
        except ValueError as exc:
            raise ProblemFileError(f"cone pair: {exc}") from None
    return ProblemFile(
        raw=data,
        problem=prob,
        cone=cone,
        grid=grid,
        cone_outer=outer,
        tolerances={**DEFAULT_TOLERANCES, **data.get("tolerances", {})},
        seeds={**DEFAULT_SEEDS, **data.get("seeds", {})},
        verify={**DEFAULT_VERIFY, **data.get("verify", {})},
        cap=int(data.get("cap", ENUMERATION_CAP)),
        path=path,
    )


def load_problem(path) -> ProblemFile:
    """Read a problem file; a bare name falls back to the bundled problems."""
    path = os.fspath(path)
    if not os.path.exists(path) and path in bundled_problems():
        path = bundled_path(path)
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemFileError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ProblemFileError(f"{path}: {exc.strerror}") from None
    if not isinstance(data, dict):
        raise ProblemFileError(f"{path}: top level must be an object")
    return parse_problem(data, path)


def bundled_problems() -> list[str]:
    root = resources.files("conedp") / "problems"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_path(name: str) -> str:
    return str(resources.files("conedp") / "problems" / f"{name}.json")


def to_jsonable(obj):
    """Recursively convert numpy scalars and arrays for json.dump."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # json has no inf/nan; keep them readable and parseable
        return v if np.isfinite(v) else str(v)
    return obj


def write_json(data, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
