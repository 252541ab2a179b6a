"""Scenario configuration: JSON documents, their schema and validation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional

import jsonschema

from .dsl import BUNDLED, PolicyProgram, PolicySyntaxError, load_bundled, parse_policy
from .mobility import MobilitySchedule, TraceError, UserSpec, gen_grid_aps, gen_synthetic_trace, load_trace
from .model import UNBOUNDED, ServiceSpec
from .topology import TierSpec, Topology, TopologyError, build_tiered_topology, topology_from_json

_HW = {"oneOf": [{"type": "integer", "minimum": 0}, {"const": "unbounded"}]}

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fogcolony scenario",
    "type": "object",
    "required": ["topology", "apps", "users", "mobility", "periods", "horizon"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
        "topology": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "file": {"type": "string"},
                "tiers": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["tier", "count", "hw"],
                        "additionalProperties": False,
                        "properties": {
                            "tier": {"enum": ["cloud", "mini-dc", "edge", "ap"]},
                            "count": {"type": "integer", "minimum": 1},
                            "hw": _HW,
                            "downlink_ms": {"type": "number", "exclusiveMinimum": 0},
                            "prefix": {"type": "string", "pattern": "^[a-z][a-z0-9]*$"},
                        },
                    },
                },
                "ap_grid": {
                    "type": "object",
                    "required": ["width_m", "height_m", "spacing_m"],
                    "additionalProperties": False,
                    "properties": {
                        "width_m": {"type": "number", "exclusiveMinimum": 0},
                        "height_m": {"type": "number", "exclusiveMinimum": 0},
                        "spacing_m": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
            "oneOf": [{"required": ["file"]}, {"required": ["tiers", "ap_grid"]}],
        },
        "apps": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "required_hw", "max_request_rate", "max_latency_ms"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "class": {"type": "string"},
                    "required_hw": {"type": "integer", "minimum": 0},
                    "max_request_rate": {"type": "number", "exclusiveMinimum": 0},
                    "max_latency_ms": {"type": "number", "minimum": 0},
                },
            },
        },
        "policies": {"type": "object", "additionalProperties": {"type": "string"}},
        "users": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "count": {"type": "integer", "minimum": 0},
                "request_period": {"type": "number", "exclusiveMinimum": 0},
                "assignment": {"type": "object", "additionalProperties": {"type": "string"}},
                "list": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["id", "app"],
                        "additionalProperties": False,
                        "properties": {
                            "id": {"type": "string"},
                            "app": {"type": "string"},
                            "request_period": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "mobility": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["synthetic", "trace"]},
                "path": {"type": "string"},
                "epochs": {"type": "integer", "minimum": 1},
                "move_prob": {"type": "number", "minimum": 0, "maximum": 1},
                "seed": {"type": "integer"},
            },
        },
        "periods": {
            "type": "object",
            "required": ["orchestrator_period", "mobility_epoch"],
            "additionalProperties": False,
            "properties": {
                "request_period": {"type": "number", "exclusiveMinimum": 0},
                "policy_period": {"type": "number", "exclusiveMinimum": 0},
                "orchestrator_period": {"type": "number", "exclusiveMinimum": 0},
                "mobility_epoch": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "flags": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "protect_last_instance": {"type": "boolean"},
                "memory_window": {"type": "integer", "minimum": 0},
            },
        },
        "initial_placement": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["app", "node"],
                "additionalProperties": False,
                "properties": {"app": {"type": "string"}, "node": {"type": "string"}},
            },
        },
        "deploys": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["time", "app", "node"],
                "additionalProperties": False,
                "properties": {
                    "time": {"type": "number", "minimum": 0},
                    "app": {"type": "string"},
                    "node": {"type": "string"},
                },
            },
        },
    },
}


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


@dataclass
class Scenario:
    name: str
    topology: Topology
    apps: list[ServiceSpec]
    policies: dict[str, str]
    programs: dict[str, PolicyProgram]
    users: list[UserSpec]
    mobility: MobilitySchedule
    request_period: float = 40.0
    policy_period: float = 200.0
    orchestrator_period: float = 200.0
    mobility_epoch: float = 2000.0
    horizon: float = 52000.0
    memory_window: int = 1
    protect_last_instance: bool = True
    seed: int = 0
    initial_placement: list[tuple[str, str]] = field(default_factory=list)
    deploys: list[tuple[float, str, str]] = field(default_factory=list)
    output_dir: str = "out"

    def validate(self) -> list[str]:
        problems = []
        for label, value in (
            ("request_period", self.request_period),
            ("policy_period", self.policy_period),
            ("orchestrator_period", self.orchestrator_period),
            ("mobility_epoch", self.mobility_epoch),
        ):
            if value <= 0:
                problems.append(f"{label} must be positive")
        if self.horizon < self.orchestrator_period:
            problems.append("horizon is shorter than one orchestrator period")
        app_ids = [a.service_id for a in self.apps]
        if len(set(app_ids)) != len(app_ids):
            problems.append("duplicate application ids")
        for app in app_ids:
            if app not in self.policies:
                problems.append(f"app {app} has no policy")
        for app, pol in self.policies.items():
            if app not in app_ids:
                problems.append(f"policy assigned to unknown app {app}")
            elif pol not in self.programs:
                problems.append(f"app {app}: policy {pol} not loaded")
        for u in self.users:
            if u.app_id not in app_ids:
                problems.append(f"user {u.user_id}: unknown app {u.app_id}")
            if u.user_id not in self.mobility.samples or not self.mobility.samples[u.user_id]:
                problems.append(f"user {u.user_id}: no mobility samples")
        for app, node in self.initial_placement + [(a, n) for _, a, n in self.deploys]:
            if app not in app_ids:
                problems.append(f"placement of unknown app {app}")
            if node not in self.topology.nodes:
                problems.append(f"placement on unknown node {node}")
        return problems


def bundled_scenario_path(name: str = "desk") -> Path:
    return Path(str(resources.files("fogcolony.scenarios").joinpath(f"{name}.json")))


def load_document(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def schema_errors(doc: Mapping) -> list[str]:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def _hw(value):
    return UNBOUNDED if value == "unbounded" else value


def build_topology(doc: Mapping, base: Path) -> Topology:
    if "file" in doc:
        return topology_from_json(load_document(base / doc["file"]))
    grid = doc["ap_grid"]
    positions = gen_grid_aps((grid["width_m"], grid["height_m"]), grid["spacing_m"])
    tiers = [
        TierSpec(t["tier"], t["count"], _hw(t["hw"]), t.get("downlink_ms", 0.0), t.get("prefix", ""))
        for t in doc["tiers"]
    ]
    return build_tiered_topology(tiers, positions)


def _area(topo: Topology, doc: Mapping) -> tuple[float, float]:
    if "ap_grid" in doc:
        return doc["ap_grid"]["width_m"], doc["ap_grid"]["height_m"]
    xs = [ap.position[0] for ap in topo.aps()]
    ys = [ap.position[1] for ap in topo.aps()]
    return max(xs) + min(xs), max(ys) + min(ys)


def load_program(name: str, base: Path) -> PolicyProgram:
    if name in BUNDLED:
        return load_bundled(name)
    path = base / name
    return parse_policy(path.read_text(encoding="utf-8"), source=str(path))


def scenario_from_document(
    doc: Mapping,
    base: str | Path = ".",
    *,
    seed: Optional[int] = None,
    policy: Optional[str] = None,
    horizon: Optional[float] = None,
    memory_window: Optional[int] = None,
) -> Scenario:
    """Build a Scenario; keyword overrides win over the document."""
    base = Path(base)
    problems = schema_errors(doc)
    if problems:
        raise ScenarioError(problems)
    try:
        topo = build_topology(doc["topology"], base)
    except (TopologyError, ValueError, OSError) as exc:
        raise ScenarioError([f"topology: {exc}"]) from None

    apps = [
        ServiceSpec(a["id"], a["required_hw"], a["max_request_rate"], a["max_latency_ms"], a.get("class", ""))
        for a in doc["apps"]
    ]
    app_ids = [a.service_id for a in apps]
    pol_doc = dict(doc.get("policies", {}))
    default = pol_doc.pop("default", None)
    policies = {app: pol_doc.get(app, default) for app in app_ids}
    for app in pol_doc:
        if app not in app_ids:
            policies[app] = pol_doc[app]
    if policy is not None:
        policies = {app: policy for app in app_ids}
    missing = [app for app, p in policies.items() if p is None]
    if missing:
        raise ScenarioError([f"app {app} has no policy" for app in missing])
    programs = {}
    for name in sorted(set(policies.values())):
        try:
            programs[name] = load_program(name, base)
        except PolicySyntaxError as exc:
            raise ScenarioError([str(exc)]) from None
        except OSError as exc:
            raise ScenarioError([f"policy {name}: {exc}"]) from None

    periods = doc["periods"]
    request_period = periods.get("request_period", 40.0)
    udoc = doc["users"]
    if "list" in udoc:
        users = [UserSpec(u["id"], u["app"], u.get("request_period", request_period)) for u in udoc["list"]]
    else:
        count = udoc.get("count", 0)
        ids = [f"u{i:02d}" for i in range(count)]
        assignment = udoc.get("assignment", {})
        users = [
            UserSpec(uid, assignment.get(uid, app_ids[i % len(app_ids)]), udoc.get("request_period", request_period))
            for i, uid in enumerate(ids)
        ]

    run_seed = doc.get("seed", 0) if seed is None else seed
    mdoc = doc["mobility"]
    epoch = periods["mobility_epoch"]
    if mdoc["kind"] == "trace":
        if "path" not in mdoc:
            raise ScenarioError(["mobility: trace needs a path"])
        trace_path = base / mdoc["path"]
        if not trace_path.exists():
            raise ScenarioError([f"mobility: trace file {trace_path} does not exist"])
        try:
            schedule = load_trace(trace_path, known_users=[u.user_id for u in users])
            schedule.attachments(topo)
        except TraceError as exc:
            raise ScenarioError([f"mobility: {exc}"]) from None
    else:
        schedule = gen_synthetic_trace(
            mdoc.get("seed", run_seed),
            [u.user_id for u in users],
            _area(topo, doc["topology"]),
            mdoc.get("epochs", 1),
            mdoc.get("move_prob", 0.0),
            epoch_length=epoch,
        )

    flags = doc.get("flags", {})
    cloud = topo.by_tier("cloud") or sorted(topo.nodes)
    placement = [(p["app"], p["node"]) for p in doc.get("initial_placement", [])] or [(app, cloud[0]) for app in app_ids]
    scenario = Scenario(
        name=doc.get("name", "scenario"),
        topology=topo,
        apps=apps,
        policies=policies,
        programs=programs,
        users=users,
        mobility=schedule,
        request_period=request_period,
        policy_period=periods.get("policy_period", periods["orchestrator_period"]),
        orchestrator_period=periods["orchestrator_period"],
        mobility_epoch=epoch,
        horizon=doc["horizon"] if horizon is None else horizon,
        memory_window=flags.get("memory_window", 1) if memory_window is None else memory_window,
        protect_last_instance=flags.get("protect_last_instance", True),
        seed=run_seed,
        initial_placement=placement,
        deploys=[(d["time"], d["app"], d["node"]) for d in doc.get("deploys", [])],
        output_dir=os.environ.get("FOGCOLONY_OUTPUT") or doc.get("output_dir", "out"),
    )
    problems = scenario.validate()
    if problems:
        raise ScenarioError(problems)
    return scenario


def load_scenario(path: str | Path, **overrides) -> Scenario:
    path = Path(path)
    try:
        doc = load_document(path)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}"]) from None
    return scenario_from_document(doc, path.parent, **overrides)
