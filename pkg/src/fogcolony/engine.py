"""Deterministic cycle loop driving mobility, routing, context and management.

Each orchestrator cycle runs, in order:

1. apply mobility up to the cycle's evaluation time and re-attach users;
2. route users to instances and summarise requests per instance;
3. refresh every node's context with those summaries;
4. evaluate each agent's policy on its knowledge base;
5. collect, assess and enact the requests;
6. remember inhibited requests;
7. snapshot metrics.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .model import (
    ContextUpdate,
    CycleLabel,
    InfrastructureState,
    ManagementAgent,
    NodeContext,
    NodeState,
    OperationKind,
    ServiceInstance,
    fresh_agent_id,
    instance_id_for,
    recompute_free_hw,
    validate_state,
)
from .orchestrator import (
    OperatorDeploy,
    assess,
    collect_requests,
    deploy_requests,
    enact,
    record_inhibitions,
    refresh_context,
)
from .scenario import Scenario, ScenarioError
from .topology import Router, UserDemand, route_users, summarise_all

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass
class SimState:
    infra: InfrastructureState
    attachment: dict[str, str]
    memory: dict = field(default_factory=dict)
    cycle: int = 0
    applied_until: float = float("-inf")
    last_eval: float = float("-inf")


@dataclass
class CycleRecord:
    cycle: int
    time: float
    epoch: int
    handovers: dict[str, int]
    live: dict[str, int]
    counts: dict[str, dict[str, int]]
    instances: dict[str, int]
    deploys: int = 0


@dataclass
class SimulationReport:
    scenario: str
    policies: dict[str, str]
    memory_window: int
    classes: list[str]
    labels: list[CycleLabel] = field(default_factory=list)
    cycles: list[CycleRecord] = field(default_factory=list)
    response_samples: list[tuple[int, str, str, float]] = field(default_factory=list)
    usage_samples: list[tuple[int, str, str, float, float]] = field(default_factory=list)
    dropped_flows: int = 0

    def label_log(self) -> str:
        return "".join(json.dumps(label.to_json(), sort_keys=True) + "\n" for label in self.labels)


OUTCOMES = ("undeploy", "migrate", "replicate", "nop", "inhibited")


class Simulation:
    def __init__(self, scenario: Scenario):
        problems = scenario.validate()
        if problems:
            raise ScenarioError(problems)
        self.scenario = scenario
        self.router = Router(scenario.topology)
        self.services = {a.service_id: a for a in scenario.apps}
        self.classes = sorted({a.app_class or a.service_id for a in scenario.apps})
        self.app_class = {a.service_id: a.app_class or a.service_id for a in scenario.apps}
        self.users = {u.user_id: u for u in scenario.users}
        self.user_class = {u.user_id: self.app_class[u.app_id] for u in scenario.users}
        topo = scenario.topology
        self.attachments = scenario.mobility.attachments(topo)
        self.handover_events = scenario.mobility.handovers(topo)
        self._deploys = sorted(scenario.deploys, key=lambda d: d[0])

    def initial_state(self) -> SimState:
        sc = self.scenario
        topo = sc.topology
        nodes = {
            n: NodeState(n, node.capacity, node.capacity)
            for n, node in topo.nodes.items()
        }
        infra = InfrastructureState(nodes, {}, self.services, {n: topo.neighbours(n) for n in topo.nodes})
        for app, node_id in sc.initial_placement:
            j = fresh_agent_id(infra)
            infra.agents[j] = ManagementAgent(j, ServiceInstance(instance_id_for(j), app, node_id), sc.policies[app])
            infra.nodes[node_id] = NodeState(
                node_id, nodes[node_id].capacity_hw, nodes[node_id].free_hw, infra.nodes[node_id].agents | {j}
            )
        recompute_free_hw(infra)
        problems = validate_state(infra)
        if problems:
            raise ScenarioError([f"initial placement: {p}" for p in problems])
        attachment = {u: seq[0][1] for u, seq in self.attachments.items() if seq}
        return SimState(infra, attachment)

    @property
    def n_cycles(self) -> int:
        return int(self.scenario.horizon // self.scenario.orchestrator_period)

    def _advance_mobility(self, sim: SimState, until: float) -> Counter:
        moved: Counter = Counter()
        for h in self.handover_events:
            if sim.applied_until < h.time <= until:
                moved[self.user_class[h.user_id]] += 1
        for user, seq in self.attachments.items():
            ap = sim.attachment.get(user)
            for t, a in seq:
                if t > until:
                    break
                ap = a
            sim.attachment[user] = ap
        sim.applied_until = max(sim.applied_until, until)
        return moved

    def _demands(self, sim: SimState) -> list[UserDemand]:
        base = self.scenario.request_period
        return [
            UserDemand(uid, u.app_id, sim.attachment[uid], base / u.request_period)
            for uid, u in sorted(self.users.items())
        ]

    def step(self, sim: SimState, now: float, report: Optional[SimulationReport] = None) -> tuple[SimState, CycleRecord, CycleLabel]:
        sc = self.scenario
        sim = SimState(sim.infra, dict(sim.attachment), sim.memory, sim.cycle, sim.applied_until, sim.last_eval)
        cycle = sim.cycle
        # agents submit at policy ticks; the last tick in this cycle is the one assessed
        tick = (now // sc.policy_period) * sc.policy_period
        fresh_tick = tick > sim.last_eval or cycle == 0
        eval_time = tick if fresh_tick else now

        moved = self._advance_mobility(sim, eval_time)

        infra = sim.infra
        instances = [a.instance for _, a in sorted(infra.agents.items())]
        assignment = route_users(self.router, self._demands(sim), instances)
        summaries = summarise_all(assignment, instances)
        per_node: dict[str, dict] = defaultdict(dict)
        for inst in instances:
            per_node[inst.node_id][inst.instance_id] = summaries[inst.instance_id]
        update = ContextUpdate({
            n: NodeContext(node.free_hw, per_node.get(n, {})) for n, node in infra.nodes.items()
        })
        infra = refresh_context(infra, update)

        window = sc.memory_window
        kbs = {
            a: infra.knowledge_base(a, tuple(r for r in sim.memory.get(a, ()) if cycle - r.cycle <= window))
            for a in infra.agents
        }
        since = now - sc.orchestrator_period if cycle else float("-inf")
        deploys = [OperatorDeploy(app, node, sc.policies[app]) for t, app, node in self._deploys if since < t <= now]

        work = infra.copy()
        if fresh_tick:
            sim.last_eval = tick
            requests = collect_requests(work, kbs, sc.programs, deploys)
        else:
            requests = deploy_requests(work, deploys)
        accepted, inhibited = assess(requests, work, sc.protect_last_instance)
        new_infra, label = enact(work, accepted, cycle, inhibited)
        memory = record_inhibitions(label, sim.memory, window, new_infra)

        live = Counter(self.app_class[a.instance.service_id] for a in infra.agents.values())
        counts = {c: dict.fromkeys(OUTCOMES, 0) for c in self.classes}
        requested = Counter()
        for req in label.accepted:
            if req.kind is OperationKind.DEPLOY:
                continue
            cls = self.app_class[infra.agents[req.agent_id].instance.service_id]
            counts[cls][req.kind.value] += 1
            requested[cls] += 1
        for req in label.inhibited:
            if req.kind is OperationKind.DEPLOY:
                continue
            cls = self.app_class[infra.agents[req.agent_id].instance.service_id]
            counts[cls]["inhibited"] += 1
            requested[cls] += 1
        for c in self.classes:
            counts[c]["nop"] = live[c] - requested[c]
        after = Counter(self.app_class[a.instance.service_id] for a in new_infra.agents.values())
        record = CycleRecord(
            cycle=cycle,
            time=now,
            epoch=int(now // sc.mobility_epoch),
            handovers={c: moved[c] for c in self.classes},
            live={c: live[c] for c in self.classes},
            counts=counts,
            instances={c: after[c] for c in self.classes},
            deploys=sum(1 for r in label.accepted if r.kind is OperationKind.DEPLOY),
        )

        if report is not None:
            inst_by_id = {i.instance_id: i for i in instances}
            for uid, flow in sorted(assignment.flows.items()):
                report.response_samples.append((cycle, uid, self.user_class[uid], flow.latency_ms))
            report.dropped_flows += len(assignment.dropped)
            received = Counter()
            for flow in assignment.flows.values():
                received[inst_by_id[flow.instance_id].service_id] += flow.rate
            per_app = Counter(i.service_id for i in instances)
            for app, spec in sorted(self.services.items()):
                if per_app[app]:
                    report.usage_samples.append(
                        (cycle, app, self.app_class[app], received[app], per_app[app] * spec.max_request_rate)
                    )

        sim = SimState(new_infra, sim.attachment, memory, cycle + 1, sim.applied_until, sim.last_eval)
        return sim, record, label

    def run(self) -> SimulationReport:
        sc = self.scenario
        report = SimulationReport(sc.name, dict(sc.policies), sc.memory_window, self.classes)
        sim = self.initial_state()
        for k in range(self.n_cycles):
            now = k * sc.orchestrator_period
            try:
                sim, record, label = self.step(sim, now, report)
            except Exception as exc:
                dump = {
                    "cycle": k,
                    "agents": {a: (ag.instance.service_id, ag.instance.node_id) for a, ag in sim.infra.agents.items()},
                    "free_hw": {n: node.free_hw for n, node in sim.infra.nodes.items()},
                }
                raise SimulationError(f"cycle {k} failed: {exc}; state={dump}") from exc
            report.labels.append(label)
            report.cycles.append(record)
        log.info("%s: %d cycles, %d agents at end", sc.name, len(report.cycles), len(sim.infra.agents))
        return report


def run(scenario: Scenario) -> SimulationReport:
    return Simulation(scenario).run()
