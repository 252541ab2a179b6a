import random

import pytest

from fogcolony.model import (
    SELF,
    InfrastructureState,
    InhibitionRecord,
    KnowledgeBase,
    ManagementAgent,
    NodeState,
    OperationKind,
    RequestSummary,
    ServiceInstance,
    ServiceSpec,
    UNBOUNDED,
    recompute_free_hw,
)

NODES = ("n1", "n2", "n3")


def make_kb(requests=(), *, hw=1, max_rate=5, max_lat=10, free=5, inhibited=(), node="n0", iid="s1"):
    spec = ServiceSpec("app", hw, max_rate, max_lat)
    inst = ServiceInstance(iid, "app", node)
    reqs = tuple(RequestSummary(iid, n, rate, lat) for n, rate, lat in requests)
    recs = tuple(InhibitionRecord(OperationKind(k), iid, t, 0) for k, t in inhibited)
    return KnowledgeBase(spec, (node, free), inst, reqs, recs)


def broadcast_kb():
    """The videoBroadcast instance s1 on n42 with its three request facts."""
    spec = ServiceSpec("videoBroadcast", 4, 10, 25)
    inst = ServiceInstance("s1", "videoBroadcast", "n42")
    reqs = (
        RequestSummary("s1", SELF, 5, 0),
        RequestSummary("s1", "n41", 1, 15),
        RequestSummary("s1", "n41", 1, 16),
    )
    return KnowledgeBase(spec, ("n42", 10), inst, reqs)


def random_kb(rng: random.Random) -> KnowledgeBase:
    """Small random KB: up to 5 summaries over up to 3 neighbours plus self."""
    neighbours = rng.sample(NODES, rng.randint(1, 3))
    reqs = []
    for _ in range(rng.randint(0, 5)):
        n = rng.choice(neighbours + [SELF])
        lat = 0 if n == SELF else rng.choice([1, 2, 3, 5, 8, 10, 12, 15])
        reqs.append((n, rng.choice([0.5, 1, 2, 3, 4]), lat))
    inhibited = []
    for _ in range(rng.randint(0, 3)):
        inhibited.append((rng.choice(["migrate", "replicate"]), rng.choice(neighbours + [SELF])))
    return make_kb(
        reqs,
        hw=rng.randint(0, 3),
        max_rate=rng.choice([1, 2, 3, 5, 8]),
        max_lat=rng.choice([0, 1, 3, 8, 10]),
        free=rng.choice([0, 1, 2, 5, UNBOUNDED]),
        inhibited=inhibited,
    )


def small_state(capacities=None, links=None, placements=(), services=None):
    """InfrastructureState from {node: capacity}, undirected links and (agent, app, node) placements."""
    capacities = capacities or {"c": UNBOUNDED, "e": 2, "a": 1}
    links = [("c", "e"), ("e", "a")] if links is None else links
    services = services or {"app": ServiceSpec("app", 1, 2, 5)}
    nbrs = {n: set() for n in capacities}
    for a, b in links:
        nbrs[a].add(b)
        nbrs[b].add(a)
    nodes = {n: NodeState(n, cap, cap) for n, cap in capacities.items()}
    agents = {}
    for agent_id, app, node in placements:
        agents[agent_id] = ManagementAgent(agent_id, ServiceInstance(f"s{agent_id:04d}", app, node), "policy1")
        nodes[node] = NodeState(node, nodes[node].capacity_hw, nodes[node].free_hw, nodes[node].agents | {agent_id})
    state = InfrastructureState(nodes, agents, services, {n: frozenset(v) for n, v in nbrs.items()},
                                next_agent_id=max((p[0] for p in placements), default=-1) + 1)
    recompute_free_hw(state)
    return state


@pytest.fixture
def rng():
    return random.Random(1234)
