import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import small_state
from fogcolony.dsl import parse_policy
from fogcolony.model import (
    SELF,
    UNBOUNDED,
    ContextUpdate,
    CycleLabel,
    InhibitionRecord,
    NodeContext,
    OperationKind as K,
    OperationRequest,
    RequestSummary,
    ServiceSpec,
    validate_state,
)
from fogcolony.orchestrator import (
    MalformedRequestError,
    OperatorDeploy,
    assess,
    collect_requests,
    enact,
    record_inhibitions,
    refresh_context,
)

NOP = parse_policy("policy nop\nrule never: undeploy self when no_requests and not no_requests")
UNDEPLOY = parse_policy("policy u\nrule go: undeploy self when no_requests")


def kbs(state):
    return {a: state.knowledge_base(a) for a in state.agents}


def req(agent, source, kind, target):
    return OperationRequest(agent, source, kind, target)


class TestCollect:
    def test_all_nops_give_empty_set(self):
        state = small_state(placements=[(0, "app", "c"), (1, "app", "e"), (2, "app", "c")])
        for a in state.agents.values():
            assert a.policy_id == "policy1"
        assert collect_requests(state, kbs(state), {"policy1": NOP}) == []

    def test_union_with_operator_deploys(self):
        state = small_state(placements=[(0, "app", "c")])
        r = collect_requests(state, kbs(state), {"policy1": UNDEPLOY}, [OperatorDeploy("app", "e", "policy1")])
        assert [x.kind for x in r] == [K.UNDEPLOY, K.DEPLOY]
        assert r[0].target == "c"
        assert r[1].agent_id == 1

    def test_non_neighbour_target_is_malformed(self):
        prog = parse_policy("policy m\nrule go: migrate sole_source when overloaded")
        state = small_state(placements=[(0, "app", "c")])
        ctx = NodeContext(UNBOUNDED, {"s0000": (RequestSummary("s0000", "a", 5, 8),)})
        state = refresh_context(state, ContextUpdate({"c": ctx}))
        with pytest.raises(MalformedRequestError):
            collect_requests(state, kbs(state), {"policy1": prog})

    def test_migrate_to_self_is_dropped(self):
        prog = parse_policy("policy m\nrule go: migrate self when no_requests")
        state = small_state(placements=[(0, "app", "c")])
        assert collect_requests(state, kbs(state), {"policy1": prog}) == []


class TestAssess:
    def test_full_target_inhibits(self):
        state = small_state(placements=[(0, "app", "e"), (1, "app", "a")])
        acc, inh = assess([req(0, "e", K.REPLICATE, "a")], state)
        assert acc == [] and len(inh) == 1

    def test_ledger_serves_first_agent(self):
        state = small_state(capacities={"c": UNBOUNDED, "e": 3, "a": 1}, placements=[(0, "app", "e"), (1, "app", "e")])
        rs = [req(1, "e", K.REPLICATE, "a"), req(0, "e", K.REPLICATE, "a")]
        acc, inh = assess(rs, state)
        assert [r.agent_id for r in acc] == [0]
        assert [r.agent_id for r in inh] == [1]

    def test_cloud_always_accepts(self):
        state = small_state(placements=[(i, "app", "c") for i in range(5)])
        acc, inh = assess([req(i, "c", K.REPLICATE, "c") for i in range(5)], state)
        assert len(acc) == 5 and inh == []

    def test_accepted_migrate_frees_source_for_later_requests(self):
        state = small_state(capacities={"c": UNBOUNDED, "e": 1, "a": 1}, placements=[(0, "app", "e"), (1, "app", "c")])
        acc, _ = assess([req(0, "e", K.MIGRATE, "a"), req(1, "c", K.REPLICATE, "e")], state)
        assert len(acc) == 2

    def test_last_instance_protection(self):
        state = small_state(placements=[(0, "app", "c")])
        acc, inh = assess([req(0, "c", K.UNDEPLOY, "c")], state)
        assert acc == [] and len(inh) == 1
        acc, inh = assess([req(0, "c", K.UNDEPLOY, "c")], state, protect_last_instance=False)
        assert len(acc) == 1 and inh == []

    def test_protection_allows_all_but_one(self):
        state = small_state(placements=[(0, "app", "c"), (1, "app", "c"), (2, "app", "e")])
        acc, inh = assess([req(i, state.agents[i].instance.node_id, K.UNDEPLOY, state.agents[i].instance.node_id) for i in range(3)], state)
        assert [r.agent_id for r in acc] == [0, 1] and [r.agent_id for r in inh] == [2]

    def test_deploys_assessed_after_agents(self):
        state = small_state(placements=[(0, "app", "e")])
        dep = OperationRequest(9, "a", K.DEPLOY, "a", service_id="app", policy_id="policy1")
        acc, inh = assess([dep, req(0, "e", K.REPLICATE, "a")], state)
        assert [r.kind for r in acc] == [K.REPLICATE] and [r.kind for r in inh] == [K.DEPLOY]


class TestEnact:
    def test_empty_is_identity(self):
        state = small_state(placements=[(0, "app", "e")])
        new, label = enact(state, [], cycle=4)
        assert new.nodes == state.nodes and new.agents == state.agents
        assert label == CycleLabel(4, (), ())

    def test_migrate_moves_agent(self):
        state = small_state(placements=[(0, "app", "e")])
        new, _ = enact(state, [req(0, "e", K.MIGRATE, "a")])
        assert 0 not in new.nodes["e"].agents and 0 in new.nodes["a"].agents
        assert new.agents[0].instance.node_id == "a"
        assert (new.nodes["e"].free_hw, new.nodes["a"].free_hw) == (2, 0)

    def test_replicate_on_host_arithmetic(self):
        services = {"videoBroadcast": ServiceSpec("videoBroadcast", 4, 10, 25)}
        state = small_state(capacities={"n42": 10}, links=[], placements=[(0, "videoBroadcast", "n42")], services=services)
        assert state.nodes["n42"].free_hw == 6
        new, _ = enact(state, [req(0, "n42", K.REPLICATE, "n42")])
        assert len(new.nodes["n42"].agents) == 2
        assert new.nodes["n42"].free_hw == 2
        replica = new.agents[1]
        assert (replica.instance.service_id, replica.policy_id) == ("videoBroadcast", "policy1")

    def test_swap_between_full_nodes_is_refused(self):
        services = {"x": ServiceSpec("x", 1, 1, 1), "y": ServiceSpec("y", 1, 1, 1)}
        state = small_state(capacities={"p": 1, "q": 1}, links=[("p", "q")],
                            placements=[(0, "x", "p"), (1, "y", "q")], services=services)
        # a source is only credited once its own move is accepted, so neither fits
        acc, inh = assess([req(0, "p", K.MIGRATE, "q"), req(1, "q", K.MIGRATE, "p")], state)
        assert acc == [] and len(inh) == 2

    def test_undeploy_and_deploy(self):
        state = small_state(placements=[(0, "app", "e"), (1, "app", "c")])
        dep = OperationRequest(2, "a", K.DEPLOY, "a", service_id="app", policy_id="policy1")
        new, label = enact(state, [dep, req(0, "e", K.UNDEPLOY, "e")], cycle=1)
        assert set(new.agents) == {1, 2}
        assert [r.kind for r in label.accepted] == [K.UNDEPLOY, K.DEPLOY]


class TestContextAndMemory:
    def test_empty_update(self):
        state = small_state(placements=[(0, "app", "e")])
        assert refresh_context(state, ContextUpdate()) is state

    def test_update_touches_one_node(self):
        state = small_state(placements=[(0, "app", "e")])
        ctx = NodeContext(1, {"s0000": (RequestSummary("s0000", "a", 1, 3),)})
        new = refresh_context(state, ContextUpdate({"e": ctx}))
        assert [n for n in state.nodes if state.nodes[n] != new.nodes[n]] == ["e"]
        assert new.agents == state.agents
        assert new.knowledge_base(0).requests[0].rate == 1

    def _label(self, cycle):
        return CycleLabel(cycle, (), (req(0, "e", K.MIGRATE, "a"),))

    def _visible(self, memory, now, window):
        return [r for r in memory.get(0, ()) if now - r.cycle <= window]

    def test_window_one(self):
        mem = record_inhibitions(self._label(5), {}, 1)
        assert self._visible(mem, 6, 1) != []
        mem = record_inhibitions(CycleLabel(6), mem, 1)
        assert mem == {}

    def test_window_ten(self):
        mem = record_inhibitions(self._label(0), {}, 10)
        for t in range(1, 10):
            mem = record_inhibitions(CycleLabel(t), mem, 10)
            assert len(mem[0]) == 1
        mem = record_inhibitions(CycleLabel(10), mem, 10)
        assert mem == {}

    def test_window_zero(self):
        assert record_inhibitions(self._label(0), {}, 0) == {}

    def test_record_contents(self):
        mem = record_inhibitions(CycleLabel(2, (), (req(0, "e", K.REPLICATE, "e"),)), {}, 1)
        assert mem[0] == (InhibitionRecord(K.REPLICATE, "s0000", SELF, 2),)


# ---- properties over random cycles ------------------------------------------------

def random_cycle(seed):
    rng = random.Random(seed)
    caps = {"c": UNBOUNDED, "e1": rng.randint(0, 3), "e2": rng.randint(0, 3), "a1": 1, "a2": 1, "a3": rng.randint(0, 2)}
    links = [("c", "e1"), ("c", "e2"), ("e1", "a1"), ("e1", "a2"), ("e2", "a3"), ("e1", "e2")]
    services = {"x": ServiceSpec("x", 1, 2, 3), "y": ServiceSpec("y", rng.randint(0, 2), 2, 3)}
    placements, used = [], {n: 0 for n in caps}
    for i in range(rng.randint(1, 7)):
        app = rng.choice(["x", "y"])
        node = rng.choice([n for n in caps if used[n] + services[app].required_hw <= caps[n]])
        used[node] += services[app].required_hw
        placements.append((i, app, node))
    state = small_state(caps, links, placements, services)
    requests = []
    for a in state.agents.values():
        src = a.instance.node_id
        kind = rng.choice([K.UNDEPLOY, K.MIGRATE, K.REPLICATE, None])
        if kind is None:
            continue
        target = src if kind is K.UNDEPLOY else rng.choice(sorted(state.neighbours[src]) + ([src] if kind is K.REPLICATE else []))
        requests.append(req(a.agent_id, src, kind, target))
    for j in range(rng.randint(0, 2)):
        requests.append(OperationRequest(100 + j, "a3", K.DEPLOY, rng.choice(sorted(caps)), service_id="x", policy_id="policy1", order=j))
    return state, requests, rng


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_cycle_invariants(seed, protect):
    state, requests, rng = random_cycle(seed)
    acc, inh = assess(requests, state, protect)
    # label partition
    assert sorted(map(repr, acc + inh)) == sorted(map(repr, requests))
    assert not set(map(repr, acc)) & set(map(repr, inh))
    if not protect:
        assert all(r.kind is not K.UNDEPLOY for r in inh)
    new, label = enact(state, acc, 0, inh)
    assert validate_state(new) == []
    n = lambda kind: sum(1 for r in acc if r.kind is kind)
    assert len(new.agents) == len(state.agents) + n(K.DEPLOY) + n(K.REPLICATE) - n(K.UNDEPLOY)
    # enactment does not depend on the order of A
    shuffled = list(acc)
    rng.shuffle(shuffled)
    other, _ = enact(state, shuffled, 0, inh)
    assert other.agents == new.agents and other.nodes == new.nodes
