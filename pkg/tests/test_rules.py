import random

import pytest
from hypothesis import given, settings, strategies as st

import oracle
from conftest import broadcast_kb, make_kb, random_kb
from fogcolony.dsl import BUNDLED, load_bundled
from fogcolony.model import SELF, InhibitionRecord, OperationKind, RequestSummary
from fogcolony.rules import evaluate, hottest_source, sole_source, sum_request_rates, violating_subset

PROGRAMS = {name: load_bundled(name) for name in BUNDLED}


def decision(policy, kb):
    op = evaluate(PROGRAMS[policy], kb)
    return None if op is None else (op.kind.value, op.target)


def rs(*triples):
    return tuple(RequestSummary("s1", n, r, l) for n, r, l in triples)


class TestHelpers:
    def test_sum_rates(self):
        assert sum_request_rates(rs((SELF, 5, 0), ("a", 1, 1), ("a", 1, 2))) == 7
        assert sum_request_rates(()) == 0
        assert sum_request_rates(rs(("a", 2.5, 1), ("b", 2.5, 1))) == 5

    def test_hottest_source(self):
        assert hottest_source(broadcast_kb().requests) == SELF
        assert hottest_source(rs(("n1", 3, 1), ("n2", 3, 1))) == "n1"
        assert hottest_source(rs(("n1", 3, 1)), exclusions={"n1"}) is None
        assert hottest_source(()) is None

    def test_hottest_ties_put_self_last(self):
        assert hottest_source(rs((SELF, 2, 0), ("z9", 2, 4))) == "z9"

    def test_sole_source(self):
        assert sole_source(rs(("n41", 1, 15), ("n41", 1, 16))) == "n41"
        assert sole_source(rs((SELF, 5, 0), ("n41", 1, 15))) is None
        assert sole_source(rs((SELF, 5, 0))) is None
        assert sole_source(()) is None

    def test_violating_subset(self):
        assert violating_subset(broadcast_kb().requests, 25) == []
        reqs = rs(("n41", 1, 15), ("n41", 1, 16), (SELF, 5, 0))
        assert violating_subset(reqs, 14) == list(reqs[:2])
        assert violating_subset(rs((SELF, 5, 0)), 0) == []


class TestListedExamples:
    def test_broadcast_kb_is_nop_under_all_policies(self):
        for p in BUNDLED:
            assert decision(p, broadcast_kb()) is None

    def test_no_requests_undeploys(self):
        for p in BUNDLED:
            assert decision(p, make_kb([])) == ("undeploy", SELF)

    def test_policy1_overloaded_sole_source_migrates(self):
        kb = make_kb([("n41", 4, 3), ("n41", 2, 5)], max_rate=5)
        assert decision("policy1", kb) == ("migrate", "n41")

    def test_policy2_rule_order_prefers_migrate(self):
        # both the migrate and the replicate clause hold; the earlier one wins
        kb = make_kb([("n40", 3, 15)], max_lat=10)
        assert decision("policy2", kb) == ("migrate", "n40")
        assert oracle.decide("policy2", kb) == ("migrate", "n40")

    def test_policy1_replicate_to_self_needs_room(self):
        reqs = [(SELF, 4, 0), ("n1", 2, 3)]
        assert decision("policy1", make_kb(reqs, max_rate=5, hw=2, free=2)) == ("replicate", SELF)
        assert decision("policy1", make_kb(reqs, max_rate=5, hw=2, free=1)) is None

    def test_policy1_replicate_to_neighbour_ignores_host_room(self):
        kb = make_kb([("n1", 4, 3), ("n2", 2, 3)], max_rate=5, hw=3, free=0)
        assert decision("policy1", kb) == ("replicate", "n1")

    def test_strict_thresholds(self):
        assert decision("policy1", make_kb([("n1", 5, 3)], max_rate=5)) is None
        assert decision("policy2", make_kb([("n1", 1, 10)], max_lat=10)) is None

    def test_policy3_latency_branch_targets_violating_hop(self):
        kb = make_kb([("n1", 4, 2), ("n2", 1, 9)], max_rate=10, max_lat=5)
        assert decision("policy3", kb) == ("replicate", "n2")

    def test_policy4_migrate_memory_falls_through_to_replicate(self):
        reqs = [("n1", 3, 2)]
        assert decision("policy4", make_kb(reqs, max_rate=2)) == ("migrate", "n1")
        kb = make_kb(reqs, max_rate=2, inhibited=[("migrate", "n1")])
        assert decision("policy4", kb) == ("replicate", "n1")

    def test_policy4_replicate_memory_moves_to_next_hottest(self):
        reqs = [("n1", 3, 2), ("n2", 2, 2)]
        assert decision("policy4", make_kb(reqs, max_rate=4)) == ("replicate", "n1")
        kb = make_kb(reqs, max_rate=4, inhibited=[("replicate", "n1")])
        # without n1's traffic the instance is no longer overloaded
        assert decision("policy4", kb) is None
        kb = make_kb(reqs, max_rate=1, inhibited=[("replicate", "n1")])
        assert decision("policy4", kb) == ("replicate", "n2")

    def test_memory_of_other_instances_is_ignored(self):
        kb = make_kb([("n1", 3, 2)], max_rate=2)
        foreign = InhibitionRecord(OperationKind.MIGRATE, "other", "n1", 0)
        kb = type(kb)(kb.service, kb.node, kb.instance, kb.requests, (foreign,))
        assert decision("policy4", kb) == ("migrate", "n1")


@pytest.mark.parametrize("policy", BUNDLED)
def test_oracle_equivalence_seeded(policy):
    rng = random.Random(1000 + BUNDLED.index(policy))
    mismatches, seen = [], set()
    for _ in range(1500):
        kb = random_kb(rng)
        got = decision(policy, kb)
        seen.add(got[0] if got else None)
        if got != oracle.decide(policy, kb):
            mismatches.append(kb)
    assert mismatches == []
    assert seen == {"undeploy", "migrate", "replicate", None}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(BUNDLED))
def test_evaluate_is_pure(seed, policy):
    kb = random_kb(random.Random(seed))
    before = repr(kb)
    first = evaluate(PROGRAMS[policy], kb)
    assert evaluate(PROGRAMS[policy], kb) == first
    assert repr(kb) == before


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_policy1_priority_migrate_over_replicate(seed):
    kb = random_kb(random.Random(seed))
    migrate = oracle._p1_migrate(kb)
    replicate = oracle._p1_replicate(kb)
    if kb.requests and migrate is not None and replicate is not None:
        assert decision("policy1", kb) == ("migrate", migrate)


ORDER = {"undeploy": 0, "migrate": 1, "replicate": 2, None: 3}


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_policy4_migrate_memory_is_monotone(seed):
    kb = random_kb(random.Random(seed))
    before = decision("policy4", kb)
    if before is None or before[0] != "migrate":
        return
    rec = InhibitionRecord(OperationKind.MIGRATE, kb.instance.instance_id, before[1], 0)
    after = decision("policy4", type(kb)(kb.service, kb.node, kb.instance, kb.requests, kb.inhibited + (rec,)))
    assert ORDER[after[0] if after else None] > ORDER["migrate"]
