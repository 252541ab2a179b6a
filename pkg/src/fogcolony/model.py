"""Domain types shared by every part of the simulator.

Hardware is a single integer dimension.  Cloud-tier nodes use ``UNBOUNDED``
(positive infinity) so capacity comparisons need no special casing.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

UNBOUNDED = math.inf
SELF = "self"


def is_unbounded(value: float) -> bool:
    return value == UNBOUNDED


class OperationKind(str, enum.Enum):
    DEPLOY = "deploy"
    UNDEPLOY = "undeploy"
    MIGRATE = "migrate"
    REPLICATE = "replicate"


PLACEMENT_KINDS = (OperationKind.UNDEPLOY, OperationKind.MIGRATE, OperationKind.REPLICATE)


@dataclass(frozen=True)
class ServiceSpec:
    service_id: str
    required_hw: int
    max_request_rate: float
    max_latency_to_client: float
    app_class: str = ""

    def __post_init__(self):
        if self.required_hw < 0:
            raise ValueError(f"{self.service_id}: required_hw must be >= 0")
        if self.max_request_rate <= 0:
            raise ValueError(f"{self.service_id}: max_request_rate must be > 0")
        if self.max_latency_to_client < 0:
            raise ValueError(f"{self.service_id}: max_latency_to_client must be >= 0")


@dataclass(frozen=True)
class ServiceInstance:
    instance_id: str
    service_id: str
    node_id: str


@dataclass(frozen=True)
class ManagementAgent:
    agent_id: int
    instance: ServiceInstance
    policy_id: str


@dataclass(frozen=True)
class RequestSummary:
    """Requests reaching an instance through one last hop with one path latency."""

    instance_id: str
    neighbour: str
    rate: float
    latency_to_client: float


@dataclass(frozen=True)
class InhibitionRecord:
    op_kind: OperationKind
    instance_id: str
    target: str
    cycle: int


@dataclass(frozen=True)
class NodeContext:
    """K_n: what the node's monitoring exposes to resident agents."""

    free_hw: float = 0
    requests: Mapping[str, tuple[RequestSummary, ...]] = field(default_factory=dict)


@dataclass(frozen=True)
class NodeState:
    node_id: str
    capacity_hw: float
    free_hw: float
    agents: frozenset[int] = frozenset()
    knowledge: NodeContext = NodeContext()
    acceptance: str = "capacity"

    @property
    def bounded(self) -> bool:
        return not is_unbounded(self.capacity_hw)


@dataclass(frozen=True)
class KnowledgeBase:
    """The facts one agent may read.  Nothing about other nodes or full paths."""

    service: ServiceSpec
    node: tuple[str, float]
    instance: ServiceInstance
    requests: tuple[RequestSummary, ...] = ()
    inhibited: tuple[InhibitionRecord, ...] = ()


@dataclass(frozen=True)
class Operation:
    """A policy decision, with the target relative to the deciding agent."""

    kind: OperationKind
    target: str = SELF


@dataclass(frozen=True)
class OperationRequest:
    """An element of R.  ``target`` is always a concrete node id.

    Deploy requests carry the new agent's service and policy instead of
    referring to an existing agent.
    """

    agent_id: int
    source: str
    kind: OperationKind
    target: str
    service_id: str | None = None
    policy_id: str | None = None
    order: int = 0

    def sort_key(self):
        return (self.kind is OperationKind.DEPLOY, self.order if self.kind is OperationKind.DEPLOY else self.agent_id)

    def to_json(self) -> dict:
        return {"agent": self.agent_id, "kind": self.kind.value, "source": self.source, "target": self.target}


@dataclass(frozen=True)
class CycleLabel:
    cycle: int
    accepted: tuple[OperationRequest, ...] = ()
    inhibited: tuple[OperationRequest, ...] = ()

    def to_json(self) -> dict:
        return {
            "cycle": self.cycle,
            "accepted": [r.to_json() for r in self.accepted],
            "inhibited": [r.to_json() for r in self.inhibited],
        }


@dataclass(frozen=True)
class ContextUpdate:
    """Replacement knowledge for a subset of nodes (D restricted per node)."""

    per_node: Mapping[str, NodeContext] = field(default_factory=dict)


@dataclass
class InfrastructureState:
    nodes: dict[str, NodeState]
    agents: dict[int, ManagementAgent]
    services: dict[str, ServiceSpec]
    neighbours: Mapping[str, frozenset[str]] = field(default_factory=dict)
    next_agent_id: int = 0

    def copy(self) -> InfrastructureState:
        return InfrastructureState(
            nodes=dict(self.nodes),
            agents=dict(self.agents),
            services=self.services,
            neighbours=self.neighbours,
            next_agent_id=self.next_agent_id,
        )

    def instances_of(self, service_id: str) -> list[ServiceInstance]:
        return [a.instance for _, a in sorted(self.agents.items()) if a.instance.service_id == service_id]

    def used_hw(self, node_id: str) -> int:
        return sum(
            self.services[a.instance.service_id].required_hw
            for a in self.agents.values()
            if a.instance.node_id == node_id
        )

    def knowledge_base(self, agent_id: int, inhibited: tuple[InhibitionRecord, ...] = ()) -> KnowledgeBase:
        agent = self.agents[agent_id]
        inst = agent.instance
        ctx = self.nodes[inst.node_id].knowledge
        return KnowledgeBase(
            service=self.services[inst.service_id],
            node=(inst.node_id, ctx.free_hw),
            instance=inst,
            requests=tuple(ctx.requests.get(inst.instance_id, ())),
            inhibited=tuple(r for r in inhibited if r.instance_id == inst.instance_id),
        )


def instance_id_for(agent_id: int) -> str:
    return f"s{agent_id:04d}"


def fresh_agent_id(state: InfrastructureState) -> int:
    """Next id from the global monotone counter; never reuses a retired id."""
    taken = max(state.agents, default=-1) + 1
    agent_id = max(state.next_agent_id, taken)
    state.next_agent_id = agent_id + 1
    return agent_id


def recompute_free_hw(state: InfrastructureState) -> None:
    for node_id, node in state.nodes.items():
        if node.bounded:
            free = node.capacity_hw - state.used_hw(node_id)
        else:
            free = UNBOUNDED
        if free != node.free_hw:
            state.nodes[node_id] = replace(node, free_hw=free)


def validate_state(state: InfrastructureState) -> list[str]:
    violations = []
    membership: dict[int, list[str]] = {}
    instance_ids: dict[str, int] = {}
    for node_id, node in sorted(state.nodes.items()):
        for agent_id in sorted(node.agents):
            membership.setdefault(agent_id, []).append(node_id)
            if agent_id not in state.agents:
                violations.append(f"node {node_id}: lists unknown agent {agent_id}")
        if node.bounded:
            used = state.used_hw(node_id)
            if node.free_hw < 0:
                violations.append(f"node {node_id}: free_hw {node.free_hw} is negative")
            elif node.free_hw > node.capacity_hw:
                violations.append(f"node {node_id}: free_hw {node.free_hw} exceeds capacity {node.capacity_hw}")
            elif node.free_hw != node.capacity_hw - used:
                violations.append(
                    f"node {node_id}: free_hw {node.free_hw} != capacity {node.capacity_hw} - used {used}"
                )
    for agent_id, agent in sorted(state.agents.items()):
        inst = agent.instance
        if agent.agent_id != agent_id:
            violations.append(f"agent {agent_id}: keyed under a different id {agent.agent_id}")
        if inst.instance_id in instance_ids:
            violations.append(f"agent {agent_id}: instance {inst.instance_id} also managed by agent {instance_ids[inst.instance_id]}")
        instance_ids[inst.instance_id] = agent_id
        if inst.service_id not in state.services:
            violations.append(f"agent {agent_id}: unknown service {inst.service_id}")
        if inst.node_id not in state.nodes:
            violations.append(f"agent {agent_id}: host node {inst.node_id} does not exist")
            continue
        hosts = membership.get(agent_id, [])
        if len(hosts) > 1:
            violations.append(f"agent {agent_id}: appears in several nodes {hosts}")
        elif not hosts:
            violations.append(f"agent {agent_id}: missing from host {inst.node_id} agent set")
        elif hosts[0] != inst.node_id:
            violations.append(f"agent {agent_id}: listed on {hosts[0]} but hosted on {inst.node_id}")
    return violations
