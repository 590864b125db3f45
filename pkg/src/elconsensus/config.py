"""Scenario files: JSON schema, dotted-key overrides, and conversion to :class:`Scenario`."""

from __future__ import annotations

import copy
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from .analyze import AnalysisSettings
from .control import ControlGains
from .dynamics import EARTH_MU, LeaderOrbit
from .graph import NetworkTopology, TopologyError
from .simulate import InitSpec, OrbitTable, Scenario


class ScenarioError(ValueError):
    def __init__(self, path: str, reason: str):
        self.path, self.reason = path, reason
        super().__init__(f"{path}: {reason}")


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_range = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}
_matrix_n3 = {"type": "array", "items": _vec3, "minItems": 1}
_scalar_or_list = lambda item: {"oneOf": [item, {"type": "array", "items": item, "minItems": 1}]}  # noqa: E731

SCHEMA = {
    "type": "object",
    "required": ["topology", "orbit", "gains", "agents", "sim"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "topology": {
            "type": "object",
            "required": ["adjacency", "leader_weights"],
            "properties": {
                "adjacency": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _num}},
                "leader_weights": {"type": "array", "items": _num, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "orbit": {
            "type": "object",
            "required": ["r_l"],
            "properties": {
                "r_l": _pos,
                "mu": _pos,
                "mode": {"enum": ["circular", "tabulated"]},
                "table": {
                    "type": "object",
                    "required": ["t", "theta_dot", "theta_ddot"],
                    "properties": {
                        k: {"type": "array", "items": _num, "minItems": 1}
                        for k in ("t", "theta_dot", "theta_ddot")
                    },
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "gains": {
            "type": "object",
            "required": ["alpha", "lambda", "beta", "gamma"],
            "properties": {
                "alpha": _nonneg,
                "lambda": _nonneg,
                "beta": _scalar_or_list(_nonneg),
                "gamma": _scalar_or_list(_nonneg),
            },
            "additionalProperties": False,
        },
        "agents": {
            "type": "object",
            "required": ["mass"],
            "properties": {
                "mass": _scalar_or_list(_pos),
                "bias_range": _range,
                "biases": _matrix_n3,
                "disturbance": {"oneOf": [_vec3, _matrix_n3]},
            },
            "additionalProperties": False,
        },
        "init": {
            "type": "object",
            "properties": {
                "q_range": _range,
                "qdot_range": _range,
                "bhat_rule": {"enum": ["offset", "zero", "true"]},
                "bhat_offset": _num,
                "q": _matrix_n3,
                "qdot": _matrix_n3,
                "bhat": _matrix_n3,
            },
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "required": ["dt", "t_end", "seed"],
            "properties": {
                "dt": _pos,
                "t_end": _pos,
                "seed": {"type": "integer", "minimum": 0},
                "sign_epsilon": _nonneg,
                "stride": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
        "bounds": {
            "type": "object",
            "properties": {"region_radius": _pos},
            "additionalProperties": False,
        },
        "analysis": {"type": "object"},
    },
    "additionalProperties": False,
}


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def load_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError("$", f"cannot read {path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("$", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def shipped_scenario_path(name: str = "reference_scenario.json") -> Path:
    return Path(str(resources.files("elconsensus") / "scenarios" / name))


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Return a copy of ``raw`` with ``key.path=value`` assignments applied (values parsed as JSON)."""
    out = copy.deepcopy(raw)
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ScenarioError("--set", f"expected key=value, got {item!r}")
            key, text = item.split("=", 1)
            value = parse_value(text)
        else:
            key, value = item
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ScenarioError(_json_path(parts), f"cannot descend into non-object at {p!r}")
            node = nxt
        node[parts[-1]] = value
    return out


def config_hash(raw: dict) -> str:
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _per_agent(value, n, path):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(path, f"expected a scalar or {n} values, got {arr.shape[0]}")
    return arr


def _agent_matrix(value, n, path):
    arr = np.asarray(value, dtype=float)
    if arr.shape != (n, 3):
        raise ScenarioError(path, f"expected {n} rows of 3 values, got shape {arr.shape}")
    return arr


def _range_tuple(value, path):
    lo, hi = float(value[0]), float(value[1])
    if lo > hi:
        raise ScenarioError(path, f"range lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


def scenario_from_dict(raw: dict) -> Scenario:
    """Validate a scenario document and build the :class:`Scenario`."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ScenarioError(_json_path(e.absolute_path), e.message)

    topo_raw = raw["topology"]
    n = len(topo_raw["adjacency"])
    for i, row in enumerate(topo_raw["adjacency"]):
        if len(row) != n:
            raise ScenarioError(f"$.topology.adjacency[{i}]", f"expected {n} entries, got {len(row)}")
    try:
        topology = NetworkTopology(np.array(topo_raw["adjacency"], dtype=float), topo_raw["leader_weights"])
    except TopologyError as exc:
        raise ScenarioError("$.topology", str(exc)) from None

    orb = raw["orbit"]
    mode = orb.get("mode", "circular")
    orbit = LeaderOrbit.circular(float(orb["r_l"]), float(orb.get("mu", EARTH_MU)))
    table = None
    if mode == "tabulated":
        if "table" not in orb:
            raise ScenarioError("$.orbit.table", "required when mode is 'tabulated'")
        try:
            table = OrbitTable(orb["table"]["t"], orb["table"]["theta_dot"], orb["table"]["theta_ddot"])
        except ValueError as exc:
            raise ScenarioError("$.orbit.table", str(exc)) from None

    g = raw["gains"]
    gains = ControlGains(
        float(g["alpha"]), float(g["lambda"]),
        _per_agent(g["beta"], n, "$.gains.beta"),
        _per_agent(g["gamma"], n, "$.gains.gamma"),
    )

    ag = raw["agents"]
    masses = _per_agent(ag["mass"], n, "$.agents.mass")
    if "biases" in ag and "bias_range" in ag:
        raise ScenarioError("$.agents", "give either 'biases' or 'bias_range', not both")
    biases = _agent_matrix(ag["biases"], n, "$.agents.biases") if "biases" in ag else None
    bias_range = _range_tuple(ag.get("bias_range", [-1.0, 2.0]), "$.agents.bias_range")
    dist = None
    if "disturbance" in ag:
        d = np.asarray(ag["disturbance"], dtype=float)
        dist = np.broadcast_to(d, (n, 3)) if d.ndim == 1 else _agent_matrix(d, n, "$.agents.disturbance")

    ini = raw.get("init", {})
    init = InitSpec(
        q_range=_range_tuple(ini.get("q_range", [0.0, 9.0]), "$.init.q_range"),
        qdot_range=_range_tuple(ini.get("qdot_range", [0.0, 6.0]), "$.init.qdot_range"),
        bias_range=bias_range,
        bhat_rule=ini.get("bhat_rule", "offset"),
        bhat_offset=float(ini.get("bhat_offset", 1.0)),
        explicit_biases=biases,
        explicit_q=_agent_matrix(ini["q"], n, "$.init.q") if "q" in ini else None,
        explicit_qdot=_agent_matrix(ini["qdot"], n, "$.init.qdot") if "qdot" in ini else None,
        explicit_bhat=_agent_matrix(ini["bhat"], n, "$.init.bhat") if "bhat" in ini else None,
    )

    sim = raw["sim"]
    dt, t_end = float(sim["dt"]), float(sim["t_end"])
    if t_end < dt:
        raise ScenarioError("$.sim.t_end", f"t_end = {t_end} is shorter than dt = {dt}")
    n_steps = t_end / dt
    if abs(n_steps - round(n_steps)) > 1e-6 * max(1.0, n_steps):
        raise ScenarioError("$.sim.dt", f"t_end = {t_end} is not an integer multiple of dt = {dt}")
    try:
        analysis = AnalysisSettings.from_dict(raw.get("analysis"))
    except (TypeError, ValueError) as exc:
        raise ScenarioError("$.analysis", str(exc)) from None

    return Scenario(
        topology=topology,
        orbit=orbit,
        gains=gains,
        masses=masses,
        init=init,
        seed=int(sim["seed"]),
        t_end=t_end,
        dt=dt,
        sign_epsilon=float(sim.get("sign_epsilon", 0.0)),
        stride=int(sim.get("stride", 1)),
        disturbances=dist,
        orbit_table=table,
        region_radius=float(raw.get("bounds", {}).get("region_radius", 20.0)),
        analysis=vars(analysis),
        raw=copy.deepcopy(raw),
    )


def parse_scenario(path, overrides=()) -> Scenario:
    return scenario_from_dict(apply_overrides(load_json(path), overrides))
