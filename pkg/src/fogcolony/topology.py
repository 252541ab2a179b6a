"""Tiered infrastructure graphs, latency-shortest paths and request summaries."""

from __future__ import annotations

import csv
import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .model import SELF, UNBOUNDED, RequestSummary, ServiceInstance

TIERS = ("cloud", "mini-dc", "edge", "ap")


class TopologyError(ValueError):
    pass


class UnreachableError(TopologyError):
    pass


@dataclass(frozen=True)
class TopoNode:
    node_id: str
    tier: str
    capacity: float
    position: Optional[tuple[float, float]] = None


@dataclass
class Topology:
    nodes: dict[str, TopoNode] = field(default_factory=dict)
    links: dict[str, dict[str, float]] = field(default_factory=dict)

    def add_node(self, node: TopoNode) -> None:
        if node.node_id in self.nodes:
            raise TopologyError(f"duplicate node {node.node_id}")
        self.nodes[node.node_id] = node
        self.links.setdefault(node.node_id, {})

    def add_link(self, a: str, b: str, latency_ms: float) -> None:
        if latency_ms <= 0:
            raise TopologyError(f"link {a}-{b}: latency must be positive")
        self.links[a][b] = latency_ms
        self.links[b][a] = latency_ms

    def neighbours(self, node_id: str) -> frozenset[str]:
        return frozenset(self.links[node_id])

    def edges(self) -> list[tuple[str, str, float]]:
        return sorted((a, b, lat) for a, nbrs in self.links.items() for b, lat in nbrs.items() if a < b)

    def aps(self) -> list[TopoNode]:
        return [n for _, n in sorted(self.nodes.items()) if n.tier == "ap"]

    def by_tier(self, tier: str) -> list[str]:
        return sorted(n for n, node in self.nodes.items() if node.tier == tier)

    def check(self) -> None:
        if not self.nodes:
            raise TopologyError("empty topology")
        for ap in self.aps():
            if ap.position is None:
                raise TopologyError(f"AP {ap.node_id} has no position")
        start = min(self.nodes)
        seen, stack = {start}, [start]
        while stack:
            for nbr in self.links[stack.pop()]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        if len(seen) != len(self.nodes):
            raise TopologyError(f"topology is disconnected: {sorted(set(self.nodes) - seen)} unreachable")


@dataclass(frozen=True)
class TierSpec:
    tier: str
    count: int
    hw: float
    downlink_ms: float = 0.0
    prefix: str = ""


def build_tiered_topology(tiers: Sequence[TierSpec], ap_positions: Sequence[tuple[float, float]]) -> Topology:
    """Build a tree: each node of tier k+1 hangs off tier k round-robin.

    ``tiers`` runs top-down and must end with the AP tier; ``ap_positions``
    gives one position per AP, in id order.
    """
    if not tiers or tiers[-1].tier != "ap" or tiers[-1].count <= 0:
        raise TopologyError("the last tier must be a non-empty AP tier")
    if len(ap_positions) != tiers[-1].count:
        raise TopologyError(f"{tiers[-1].count} APs but {len(ap_positions)} AP positions")
    topo = Topology()
    previous: list[str] = []
    for level, spec in enumerate(tiers):
        if spec.count <= 0:
            raise TopologyError(f"tier {spec.tier} must have at least one node")
        width = len(str(spec.count - 1))
        prefix = spec.prefix or spec.tier.replace("-", "")
        ids = [f"{prefix}{i:0{width}d}" for i in range(spec.count)]
        for i, node_id in enumerate(ids):
            pos = tuple(ap_positions[i]) if spec.tier == "ap" else None
            topo.add_node(TopoNode(node_id, spec.tier, spec.hw, pos))
            if previous:
                topo.add_link(previous[i % len(previous)], node_id, tiers[level - 1].downlink_ms)
        previous = ids
    topo.check()
    return topo


def reference_tiers() -> list[TierSpec]:
    return [
        TierSpec("cloud", 1, UNBOUNDED, 3),
        TierSpec("mini-dc", 4, 9, 2, prefix="dc"),
        TierSpec("edge", 16, 6, 3),
        TierSpec("ap", 64, 1),
    ]


def _shortest_tree(topo: Topology, src: str) -> dict[str, tuple[float, tuple[str, ...]]]:
    # Labels compare (latency, path) so the first settled label for each node
    # is the minimal-latency, then lexicographically smallest, path.
    best: dict[str, tuple[float, tuple[str, ...]]] = {}
    heap = [(0.0, (src,))]
    while heap:
        dist, path = heapq.heappop(heap)
        node = path[-1]
        if node in best:
            continue
        best[node] = (dist, path)
        for nbr, lat in topo.links[node].items():
            if nbr not in best:
                heapq.heappush(heap, (dist + lat, path + (nbr,)))
    return best


class Router:
    """Caches single-source shortest-path trees over an immutable topology."""

    def __init__(self, topo: Topology):
        self.topo = topo
        self._trees: dict[str, dict] = {}

    def tree(self, src: str):
        if src not in self._trees:
            if src not in self.topo.nodes:
                raise TopologyError(f"unknown node {src}")
            self._trees[src] = _shortest_tree(self.topo, src)
        return self._trees[src]

    def path(self, src: str, dst: str) -> tuple[list[str], float]:
        tree = self.tree(src)
        if dst not in self.topo.nodes:
            raise TopologyError(f"unknown node {dst}")
        if dst not in tree:
            raise UnreachableError(f"{dst} unreachable from {src}")
        dist, path = tree[dst]
        return list(path), dist


def shortest_latency_path(topo: Topology, src: str, dst: str) -> tuple[list[str], float]:
    return Router(topo).path(src, dst)


@dataclass(frozen=True)
class Flow:
    user_id: str
    instance_id: str
    path: tuple[str, ...]
    latency_ms: float
    rate: float = 1.0


@dataclass(frozen=True)
class UserDemand:
    """A user's current attachment, as seen by routing."""

    user_id: str
    app_id: str
    ap_id: str
    rate: float = 1.0


@dataclass
class FlowAssignment:
    flows: dict[str, Flow] = field(default_factory=dict)
    dropped: list[str] = field(default_factory=list)


def route_users(
    topo: Topology | Router,
    users: Iterable[UserDemand],
    instances: Iterable[ServiceInstance],
) -> FlowAssignment:
    """Send each user to the closest live instance of its application.

    Ties go to the instance on the smallest node id, then the smallest
    instance id.  Users whose app has no instance are reported as dropped.
    """
    router = topo if isinstance(topo, Router) else Router(topo)
    per_app: dict[str, list[ServiceInstance]] = defaultdict(list)
    for inst in instances:
        per_app[inst.service_id].append(inst)
    result = FlowAssignment()
    for user in sorted(users, key=lambda u: u.user_id):
        candidates = per_app.get(user.app_id)
        if not candidates:
            result.dropped.append(user.user_id)
            continue
        tree = router.tree(user.ap_id)
        best = min(candidates, key=lambda i: (tree[i.node_id][0], i.node_id, i.instance_id))
        dist, path = tree[best.node_id]
        result.flows[user.user_id] = Flow(user.user_id, best.instance_id, path, dist, user.rate)
    return result


def summarise_requests(assignment: FlowAssignment, instance: ServiceInstance) -> tuple[RequestSummary, ...]:
    """requests/4 facts for one instance: last hop and path latency only."""
    groups: dict[tuple[str, float], float] = defaultdict(float)
    for flow in assignment.flows.values():
        if flow.instance_id != instance.instance_id:
            continue
        if flow.path[-1] != instance.node_id:
            raise TopologyError(f"flow of {flow.user_id} does not end at {instance.node_id}")
        if len(flow.path) == 1:
            groups[(SELF, 0.0)] += flow.rate
        else:
            groups[(flow.path[-2], flow.latency_ms)] += flow.rate
    return tuple(
        RequestSummary(instance.instance_id, hop, rate, lat)
        for (hop, lat), rate in sorted(groups.items(), key=lambda kv: (kv[0][1], kv[0][0]))
    )


def summarise_all(assignment: FlowAssignment, instances: Iterable[ServiceInstance]) -> dict[str, tuple[RequestSummary, ...]]:
    by_instance: dict[str, list[Flow]] = defaultdict(list)
    for flow in assignment.flows.values():
        by_instance[flow.instance_id].append(flow)
    out = {}
    for inst in instances:
        sub = FlowAssignment({f.user_id: f for f in by_instance.get(inst.instance_id, [])})
        out[inst.instance_id] = summarise_requests(sub, inst)
    return out


def export_csv(topo: Topology, nodes_path: Path, edges_path: Path) -> None:
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node_id", "tier", "capacity_hw", "x_m", "y_m"])
        for node_id, node in sorted(topo.nodes.items()):
            cap = "unbounded" if node.capacity == UNBOUNDED else node.capacity
            x, y = node.position if node.position else ("", "")
            w.writerow([node_id, node.tier, cap, x, y])
    with open(edges_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "latency_ms"])
        w.writerows(topo.edges())


def topology_to_json(topo: Topology) -> dict:
    return {
        "nodes": [
            {
                "id": n.node_id,
                "tier": n.tier,
                "capacity_hw": "unbounded" if n.capacity == UNBOUNDED else n.capacity,
                **({"position": list(n.position)} if n.position else {}),
            }
            for _, n in sorted(topo.nodes.items())
        ],
        "links": [{"a": a, "b": b, "latency_ms": lat} for a, b, lat in topo.edges()],
    }


def topology_from_json(doc: Mapping) -> Topology:
    topo = Topology()
    for n in doc["nodes"]:
        cap = UNBOUNDED if n["capacity_hw"] == "unbounded" else n["capacity_hw"]
        pos = tuple(n["position"]) if "position" in n else None
        topo.add_node(TopoNode(n["id"], n["tier"], cap, pos))
    for link in doc["links"]:
        topo.add_link(link["a"], link["b"], link["latency_ms"])
    topo.check()
    return topo
