"""First-match evaluation of policy programs over one agent's knowledge."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Optional

from .dsl import And, Atom, Expr, Not, Or, PolicyProgram, Rule
from .model import SELF, KnowledgeBase, Operation, RequestSummary


def sum_request_rates(requests: Iterable[RequestSummary]) -> float:
    return sum(r.rate for r in requests)


def _node_order(node: str):
    # self sorts after every real node id
    return (node == SELF, node)


def hottest_source(requests: Iterable[RequestSummary], exclusions=frozenset()) -> Optional[str]:
    """Neighbour contributing the largest total rate, or None if nothing is left."""
    totals: dict[str, float] = defaultdict(float)
    for r in requests:
        if r.neighbour not in exclusions:
            totals[r.neighbour] += r.rate
    if not totals:
        return None
    return min(totals, key=lambda n: (-totals[n], _node_order(n)))


def sole_source(requests: Iterable[RequestSummary]) -> Optional[str]:
    neighbours = {r.neighbour for r in requests}
    if len(neighbours) != 1:
        return None
    (only,) = neighbours
    return None if only == SELF else only


def violating_subset(requests: Iterable[RequestSummary], max_latency: float) -> list[RequestSummary]:
    return [r for r in requests if r.latency_to_client > max_latency]


def _rule_view(rule: Rule, kb: KnowledgeBase) -> tuple[RequestSummary, ...]:
    """Requests a rule reasons about.

    With ``excluding_inhibited`` the rule behaves as if requests arriving from
    recently refused targets did not exist, for its guard as well as its target.
    """
    if not rule.target.excluding_inhibited:
        return kb.requests
    refused = {
        rec.target
        for rec in kb.inhibited
        if rec.op_kind is rule.action and rec.instance_id == kb.instance.instance_id
    }
    return tuple(r for r in kb.requests if r.neighbour not in refused)


def _resolve(form: str, view, kb: KnowledgeBase) -> Optional[str]:
    if form == "self":
        return SELF
    if form == "sole_source":
        return sole_source(view)
    if form == "hottest_source":
        return hottest_source(view)
    if form == "hottest_violating_source":
        return hottest_source(violating_subset(view, kb.service.max_latency_to_client))
    raise ValueError(f"unknown target form {form!r}")


def _holds(expr: Expr, rule: Rule, view, target: str, kb: KnowledgeBase) -> bool:
    if isinstance(expr, And):
        return all(_holds(e, rule, view, target, kb) for e in expr.operands)
    if isinstance(expr, Or):
        return any(_holds(e, rule, view, target, kb) for e in expr.operands)
    if isinstance(expr, Not):
        return not _holds(expr.operand, rule, view, target, kb)
    name = expr.name
    if name == "no_requests":
        return not view
    if name == "overloaded":
        return sum_request_rates(view) > kb.service.max_request_rate
    if name == "latency_violated":
        return any(r.latency_to_client > kb.service.max_latency_to_client for r in view)
    if name == "target_not_self":
        return target != SELF
    if name == "target_is_self":
        return target == SELF
    if name == "target_has_capacity":
        return kb.node[1] >= kb.service.required_hw
    if name == "not_inhibited":
        return not any(
            rec.op_kind is rule.action and rec.instance_id == kb.instance.instance_id and rec.target == target
            for rec in kb.inhibited
        )
    raise ValueError(f"unknown condition {name!r}")


def evaluate(program: PolicyProgram, kb: KnowledgeBase) -> Optional[Operation]:
    """Return the operation of the first rule that fires, or None for a nop."""
    for rule in program.rules:
        view = _rule_view(rule, kb)
        target = _resolve(rule.target.form, view, kb)
        if target is None:
            continue
        if _holds(rule.guard, rule, view, target, kb):
            return Operation(rule.action, target)
    return None
