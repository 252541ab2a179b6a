"""One management cycle: collect requests, assess them, enact the accepted ones.

Assessment walks requests in agent-id order (operator deploys last) against
a per-cycle ledger of tentative free hardware, so the accepted set can always
be enacted together.  Enactment then applies every accepted request to the
pre-cycle state at once.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .dsl import PolicyProgram
from .model import (
    SELF,
    CycleLabel,
    ContextUpdate,
    InfrastructureState,
    InhibitionRecord,
    KnowledgeBase,
    ManagementAgent,
    OperationKind,
    OperationRequest,
    ServiceInstance,
    fresh_agent_id,
    instance_id_for,
    recompute_free_hw,
    validate_state,
)
from .rules import evaluate


class MalformedRequestError(ValueError):
    pass


class EnactmentError(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatorDeploy:
    service_id: str
    node_id: str
    policy_id: str


# (node, request, remaining free hw at node, hw the request needs) -> accept?
AcceptancePolicy = Callable[[str, OperationRequest, float, int], bool]


def capacity_acceptance(node_id: str, request: OperationRequest, free_hw: float, required_hw: int) -> bool:
    if request.kind is OperationKind.UNDEPLOY:
        return True
    if node_id != request.target:
        # the source of an outgoing migrate/replicate has nothing to check
        return True
    return free_hw >= required_hw


ACCEPTANCE_POLICIES: dict[str, AcceptancePolicy] = {"capacity": capacity_acceptance}


def collect_requests(
    state: InfrastructureState,
    kb_per_agent: Mapping[int, KnowledgeBase],
    programs: Mapping[str, PolicyProgram],
    operator_deploys: Sequence[OperatorDeploy] = (),
) -> list[OperationRequest]:
    requests = []
    for agent_id in sorted(state.agents):
        agent = state.agents[agent_id]
        op = evaluate(programs[agent.policy_id], kb_per_agent[agent_id])
        if op is None:
            continue
        source = agent.instance.node_id
        target = source if op.target == SELF else op.target
        if op.kind is OperationKind.MIGRATE and target == source:
            continue
        if target != source and target not in state.neighbours.get(source, ()):
            raise MalformedRequestError(
                f"agent {agent_id} on {source}: {op.kind.value} target {target} is not a neighbour"
            )
        requests.append(OperationRequest(agent_id, source, op.kind, target))
    return requests + deploy_requests(state, operator_deploys)


def deploy_requests(state: InfrastructureState, operator_deploys: Sequence[OperatorDeploy]) -> list[OperationRequest]:
    """Operator deploys as requests; each new agent takes a fresh id now."""
    requests = []
    for order, dep in enumerate(operator_deploys):
        if dep.node_id not in state.nodes:
            raise MalformedRequestError(f"deploy of {dep.service_id} onto unknown node {dep.node_id}")
        if dep.service_id not in state.services:
            raise MalformedRequestError(f"deploy of unknown service {dep.service_id}")
        requests.append(
            OperationRequest(
                fresh_agent_id(state), dep.node_id, OperationKind.DEPLOY, dep.node_id,
                service_id=dep.service_id, policy_id=dep.policy_id, order=order,
            )
        )
    return requests


def _required(state: InfrastructureState, request: OperationRequest) -> int:
    service_id = request.service_id if request.kind is OperationKind.DEPLOY else state.agents[request.agent_id].instance.service_id
    return state.services[service_id].required_hw


def assess(
    requests: Iterable[OperationRequest],
    state: InfrastructureState,
    protect_last_instance: bool = True,
    policies: Mapping[str, AcceptancePolicy] = ACCEPTANCE_POLICIES,
) -> tuple[list[OperationRequest], list[OperationRequest]]:
    """Split R into accepted and inhibited requests."""
    ledger = {n: node.free_hw for n, node in state.nodes.items()}
    live = Counter(a.instance.service_id for a in state.agents.values())
    accepted, inhibited = [], []
    for req in sorted(requests, key=OperationRequest.sort_key):
        need = _required(state, req)
        judges = [req.source] if req.target == req.source else [req.source, req.target]
        ok = all(
            policies[state.nodes[n].acceptance](n, req, ledger[n], need) for n in judges
        )
        service_id = req.service_id if req.kind is OperationKind.DEPLOY else state.agents[req.agent_id].instance.service_id
        if ok and req.kind is OperationKind.UNDEPLOY and protect_last_instance and live[service_id] <= 1:
            ok = False
        if not ok:
            inhibited.append(req)
            continue
        accepted.append(req)
        if req.kind is OperationKind.UNDEPLOY:
            ledger[req.source] += need
            live[service_id] -= 1
        elif req.kind is OperationKind.MIGRATE:
            ledger[req.source] += need
            ledger[req.target] -= need
        else:
            ledger[req.target] -= need
            live[service_id] += 1
    return accepted, inhibited


def enact(state: InfrastructureState, accepted: Iterable[OperationRequest], cycle: int = 0,
          inhibited: Sequence[OperationRequest] = ()) -> tuple[InfrastructureState, CycleLabel]:
    """Apply all accepted requests in parallel to a copy of ``state``."""
    accepted = sorted(accepted, key=OperationRequest.sort_key)
    new = state.copy()
    gained: dict[str, set[int]] = {}
    lost: dict[str, set[int]] = {}
    for req in accepted:
        if req.kind is OperationKind.DEPLOY:
            agent = ManagementAgent(req.agent_id, ServiceInstance(instance_id_for(req.agent_id), req.service_id, req.target), req.policy_id)
            new.agents[agent.agent_id] = agent
            new.next_agent_id = max(new.next_agent_id, agent.agent_id + 1)
            gained.setdefault(req.target, set()).add(agent.agent_id)
            continue
        agent = state.agents[req.agent_id]
        if req.kind is OperationKind.UNDEPLOY:
            del new.agents[agent.agent_id]
            lost.setdefault(req.source, set()).add(agent.agent_id)
        elif req.kind is OperationKind.MIGRATE:
            new.agents[agent.agent_id] = replace(agent, instance=replace(agent.instance, node_id=req.target))
            lost.setdefault(req.source, set()).add(agent.agent_id)
            gained.setdefault(req.target, set()).add(agent.agent_id)
        elif req.kind is OperationKind.REPLICATE:
            j = fresh_agent_id(new)
            replica = ManagementAgent(j, ServiceInstance(instance_id_for(j), agent.instance.service_id, req.target), agent.policy_id)
            new.agents[j] = replica
            gained.setdefault(req.target, set()).add(j)
    for node_id in set(gained) | set(lost):
        node = new.nodes[node_id]
        agents = (node.agents | gained.get(node_id, set())) - lost.get(node_id, set())
        new.nodes[node_id] = replace(node, agents=frozenset(agents))
    recompute_free_hw(new)
    problems = validate_state(new)
    if problems:
        raise EnactmentError("state invalid after enactment: " + "; ".join(problems))
    label = CycleLabel(cycle, tuple(accepted), tuple(sorted(inhibited, key=OperationRequest.sort_key)))
    return new, label


def refresh_context(state: InfrastructureState, update: ContextUpdate) -> InfrastructureState:
    """Replace K_n for every node the update covers; nothing else changes."""
    if not update.per_node:
        return state
    new = state.copy()
    for node_id, ctx in update.per_node.items():
        new.nodes[node_id] = replace(new.nodes[node_id], knowledge=ctx)
    return new


Memory = Mapping[int, tuple[InhibitionRecord, ...]]


def record_inhibitions(label: CycleLabel, memory: Memory, memory_window: int,
                       state: Optional[InfrastructureState] = None) -> dict[int, tuple[InhibitionRecord, ...]]:
    """Remember this cycle's refusals, keeping what is visible next cycle.

    A record made at cycle t stays visible while (now - t) <= memory_window,
    so window 1 shows it at t+1 only and window 0 never shows it.  When
    ``state`` is given, memories of agents that no longer exist are dropped.
    """
    horizon = label.cycle + 1
    out: dict[int, list[InhibitionRecord]] = {
        a: [r for r in recs if horizon - r.cycle <= memory_window] for a, recs in memory.items()
    }
    if memory_window > 0:
        for req in label.inhibited:
            if req.kind is OperationKind.DEPLOY:
                continue
            target = SELF if req.target == req.source else req.target
            inst = instance_id_for(req.agent_id) if state is None else _instance_of(state, req.agent_id)
            out.setdefault(req.agent_id, []).append(InhibitionRecord(req.kind, inst, target, label.cycle))
    alive = None if state is None else set(state.agents)
    return {a: tuple(recs) for a, recs in sorted(out.items()) if recs and (alive is None or a in alive)}


def _instance_of(state: InfrastructureState, agent_id: int) -> str:
    agent = state.agents.get(agent_id)
    return agent.instance.instance_id if agent else instance_id_for(agent_id)


def run_cycle(
    state: InfrastructureState,
    kb_per_agent: Mapping[int, KnowledgeBase],
    programs: Mapping[str, PolicyProgram],
    cycle: int,
    operator_deploys: Sequence[OperatorDeploy] = (),
    protect_last_instance: bool = True,
) -> tuple[InfrastructureState, CycleLabel, list[OperationRequest]]:
    work = state.copy()
    requests = collect_requests(work, kb_per_agent, programs, operator_deploys)
    accepted, inhibited = assess(requests, work, protect_last_instance)
    new, label = enact(work, accepted, cycle, inhibited)
    return new, label, requests
