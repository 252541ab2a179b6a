"""Concrete syntax for management policies.

A policy file is a header followed by ordered rules::

    policy policy1
    rule undeploy_idle: undeploy self when no_requests
    rule migrate_overload: migrate sole_source when overloaded

Rule order is significant: the evaluator fires the first rule whose target
resolves and whose guard holds.  ``and`` binds tighter than ``or``; ``#``
starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from typing import Union

from .model import OperationKind

TARGET_FORMS = ("self", "sole_source", "hottest_source", "hottest_violating_source")
ATOMS = (
    "no_requests",
    "overloaded",
    "latency_violated",
    "target_not_self",
    "target_is_self",
    "target_has_capacity",
    "not_inhibited",
)
ACTIONS = {"undeploy": OperationKind.UNDEPLOY, "migrate": OperationKind.MIGRATE, "replicate": OperationKind.REPLICATE}
KEYWORDS = {"policy", "rule", "when", "and", "or", "not", "excluding_inhibited", *ACTIONS, *TARGET_FORMS, *ATOMS}
BUNDLED = ("policy1", "policy2", "policy3", "policy4")


@dataclass(frozen=True)
class Atom:
    name: str


@dataclass(frozen=True)
class Not:
    operand: "Expr"


@dataclass(frozen=True)
class And:
    operands: tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    operands: tuple["Expr", ...]


Expr = Union[Atom, Not, And, Or]


@dataclass(frozen=True)
class Target:
    form: str
    excluding_inhibited: bool = False


@dataclass(frozen=True)
class Rule:
    label: str
    action: OperationKind
    target: Target
    guard: Expr


@dataclass(frozen=True)
class PolicyProgram:
    name: str
    rules: tuple[Rule, ...]


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int
    column: int

    def __str__(self):
        return f"{self.line}:{self.column}: {self.message}"


class PolicySyntaxError(ValueError):
    def __init__(self, diagnostics: list[Diagnostic], source: str = "<policy>"):
        self.diagnostics = diagnostics
        self.source = source
        super().__init__("\n".join(f"{source}:{d}" for d in diagnostics))

    @property
    def line(self) -> int:
        return self.diagnostics[0].line

    @property
    def column(self) -> int:
        return self.diagnostics[0].column


@dataclass(frozen=True)
class Token:
    kind: str  # "word", "punct" or "eof"
    text: str
    line: int
    column: int


_TOKEN_RE = re.compile(r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)|(?P<word>[A-Za-z_][A-Za-z0-9_]*)|(?P<punct>[:()])")


def tokenize(text: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise PolicySyntaxError([Diagnostic(f"unexpected character {text[pos]!r}", line, col)])
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind in ("word", "punct"):
            tokens.append(Token(kind, m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0
        self.diagnostics: list[Diagnostic] = []

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def fail(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise PolicySyntaxError([Diagnostic(message, tok.line, tok.column)])

    def expect(self, text: str) -> Token:
        tok = self.tok
        if tok.text != text or tok.kind == "eof":
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            self.fail(f"expected {text!r}, found {found}")
        self.pos += 1
        return tok

    def ident(self, what: str) -> Token:
        tok = self.tok
        if tok.kind != "word" or tok.text in KEYWORDS:
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            self.fail(f"expected {what}, found {found}")
        self.pos += 1
        return tok

    def program(self) -> PolicyProgram:
        name = None
        try:
            self.expect("policy")
            name = self.ident("policy name").text
        except PolicySyntaxError as err:
            self.diagnostics.extend(err.diagnostics)
            self.skip_to_rule()
        rules: list[Rule] = []
        labels: dict[str, Token] = {}
        if self.tok.kind == "eof" and not self.diagnostics:
            self.diagnostics.append(Diagnostic("policy has no rules", self.tok.line, self.tok.column))
        while self.tok.kind != "eof":
            start = self.tok
            try:
                rule = self.rule()
            except PolicySyntaxError as err:
                self.diagnostics.extend(err.diagnostics)
                if self.tok is start:
                    self.pos += 1
                self.skip_to_rule()
                continue
            if rule.label in labels:
                first = labels[rule.label]
                self.diagnostics.append(
                    Diagnostic(f"duplicate rule label {rule.label!r} (first defined at {first.line}:{first.column})", start.line, start.column)
                )
            else:
                labels[rule.label] = start
            rules.append(rule)
        if self.diagnostics:
            raise PolicySyntaxError(self.diagnostics)
        return PolicyProgram(name, tuple(rules))

    def skip_to_rule(self):
        while self.tok.kind != "eof" and self.tok.text != "rule":
            self.pos += 1

    def rule(self) -> Rule:
        self.expect("rule")
        label = self.ident("rule label").text
        self.expect(":")
        action_tok = self.tok
        if action_tok.text not in ACTIONS:
            self.fail(f"expected one of undeploy, migrate, replicate, found {action_tok.text!r}")
        self.pos += 1
        target_tok = self.tok
        target = self.target()
        action = ACTIONS[action_tok.text]
        if action is OperationKind.UNDEPLOY and target.form != "self":
            self.fail("undeploy target must be self", target_tok)
        self.expect("when")
        guard = self.disjunction()
        if self.tok.kind != "eof" and self.tok.text != "rule":
            self.fail(f"unexpected {self.tok.text!r} after guard")
        return Rule(label, action, target, guard)

    def target(self) -> Target:
        tok = self.tok
        if tok.text not in TARGET_FORMS:
            self.fail(f"expected a target ({', '.join(TARGET_FORMS)}), found {tok.text!r}")
        self.pos += 1
        excluding = False
        if self.tok.text == "excluding_inhibited":
            if tok.text not in ("hottest_source", "hottest_violating_source"):
                self.fail("excluding_inhibited only applies to hottest_source and hottest_violating_source")
            excluding = True
            self.pos += 1
        return Target(tok.text, excluding)

    def disjunction(self) -> Expr:
        items = [self.conjunction()]
        while self.tok.text == "or":
            self.pos += 1
            items.append(self.conjunction())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def conjunction(self) -> Expr:
        items = [self.term()]
        while self.tok.text == "and":
            self.pos += 1
            items.append(self.term())
        return items[0] if len(items) == 1 else And(tuple(items))

    def term(self) -> Expr:
        if self.tok.text == "not":
            self.pos += 1
            return Not(self.atom())
        return self.atom()

    def atom(self) -> Expr:
        tok = self.tok
        if tok.text == "(" and tok.kind == "punct":
            self.pos += 1
            inner = self.disjunction()
            self.expect(")")
            return inner
        if tok.text in ATOMS:
            self.pos += 1
            return Atom(tok.text)
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        self.fail(f"unknown condition {found}; expected one of {', '.join(ATOMS)}")


def parse_policy(text: str, source: str = "<policy>") -> PolicyProgram:
    try:
        return _Parser(tokenize(text)).program()
    except PolicySyntaxError as err:
        err.source = source
        err.args = ("\n".join(f"{source}:{d}" for d in err.diagnostics),)
        raise


def format_expr(expr: Expr) -> str:
    if isinstance(expr, Atom):
        return expr.name
    if isinstance(expr, Not):
        inner = format_expr(expr.operand)
        return f"not {inner}" if isinstance(expr.operand, Atom) else f"not ({inner})"
    if isinstance(expr, And):
        return " and ".join(
            format_expr(e) if isinstance(e, (Atom, Not)) else f"({format_expr(e)})" for e in expr.operands
        )
    return " or ".join(f"({format_expr(e)})" if isinstance(e, Or) else format_expr(e) for e in expr.operands)


def format_policy(program: PolicyProgram) -> str:
    lines = [f"policy {program.name}"]
    for rule in program.rules:
        target = rule.target.form + (" excluding_inhibited" if rule.target.excluding_inhibited else "")
        lines.append(f"rule {rule.label}: {rule.action.value} {target} when {format_expr(rule.guard)}")
    return "\n".join(lines) + "\n"


def bundled_policy_text(name: str) -> str:
    if name not in BUNDLED:
        raise KeyError(f"no bundled policy named {name!r}")
    return resources.files("fogcolony.policies").joinpath(f"{name}.fp").read_text(encoding="utf-8")


def load_bundled(name: str) -> PolicyProgram:
    return parse_policy(bundled_policy_text(name), source=f"{name}.fp")
