"""Deterministic execution of traversal programs over an in-memory graph.

Result sets are sets of terms, always kept in lexicographic order, so a
program's output is a pure function of (program, graph). Every triple
touched while traversing is collected as provenance for the final result,
deduplicated in first-touch order.
"""
from __future__ import annotations

import re
from decimal import Decimal

from ..kgstore import Graph, Term, Triple
from .ast import (
    EntityRef,
    ExecutionPreconditionViolated,
    Expr,
    FilterStep,
    InStep,
    IntersectStep,
    LetStmt,
    LimitStep,
    OutStep,
    Program,
    ResultSet,
    ReturnStmt,
    UnionStep,
    VarRef,
)
from .validator import validate

_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _compare(left: str, op: str, right: str) -> bool:
    # Numeric comparison only when both sides are numeric literals, so
    # "10" < "9" is false as numbers but "v10" < "v9" stays lexicographic.
    if _NUMBER_RE.fullmatch(left) and _NUMBER_RE.fullmatch(right):
        a: object = Decimal(left)
        b: object = Decimal(right)
    else:
        a, b = left, right
    if op == "==":
        return a == b
    if op == "!=":
        return a != b
    if op == "<":
        return a < b  # type: ignore[operator]
    if op == "<=":
        return a <= b  # type: ignore[operator]
    if op == ">":
        return a > b  # type: ignore[operator]
    if op == ">=":
        return a >= b  # type: ignore[operator]
    raise ValueError(f"unknown comparison operator {op!r}")


class _Machine:
    def __init__(self, graph: Graph):
        self.graph = graph
        self.env: dict[str, tuple[Term, ...]] = {}
        self.trail: list[Triple] = []
        self.seen: set[Triple] = set()

    def record(self, triples: tuple[Triple, ...]) -> None:
        for t in triples:
            if t not in self.seen:
                self.seen.add(t)
                self.trail.append(t)

    def eval_source(self, expr: Expr) -> tuple[Term, ...]:
        src = expr.source
        if isinstance(src, EntityRef):
            ids = self.graph.resolve_label(src.text)
            if not ids and self.graph.has_entity(src.text):
                ids = (src.text,)
            return tuple(Term(i) for i in ids)
        if isinstance(src, VarRef):
            return self.env[src.name]
        raise TypeError(f"not a source: {src!r}")

    def eval_expr(self, expr: Expr) -> tuple[Term, ...]:
        current = self.eval_source(expr)
        for step in expr.steps:
            if isinstance(step, (OutStep, InStep)):
                direction = "out" if isinstance(step, OutStep) else "in"
                found: set[Term] = set()
                for term in current:
                    edges = self.graph.edges(term.value, step.relation, direction)
                    self.record(edges)
                    if direction == "out":
                        found.update(t.obj for t in edges)
                    else:
                        found.update(Term(t.subject) for t in edges)
                current = tuple(sorted(found))
            elif isinstance(step, FilterStep):
                current = tuple(t for t in current if _compare(t.value, step.op, step.value))
            elif isinstance(step, UnionStep):
                current = tuple(sorted(set(current) | set(self.env[step.var])))
            elif isinstance(step, IntersectStep):
                current = tuple(sorted(set(current) & set(self.env[step.var])))
            elif isinstance(step, LimitStep):
                current = current[: step.count]
            else:
                raise TypeError(f"not a step: {step!r}")
        return tuple(sorted(set(current)))

    def run(self, program: Program) -> ResultSet:
        final: tuple[Term, ...] = ()
        for stmt in program.statements:
            if isinstance(stmt, LetStmt):
                self.env[stmt.name] = self.eval_expr(stmt.expr)
            elif isinstance(stmt, ReturnStmt):
                final = self.eval_expr(stmt.expr)
            else:
                raise TypeError(f"not a statement: {stmt!r}")
        return ResultSet(final, tuple(self.trail))


def execute(program: Program, graph: Graph) -> ResultSet:
    """Run a program; refuses to start if validation reports any error."""
    diagnostics = validate(program, graph)
    errors = tuple(d for d in diagnostics if d.is_error)
    if errors:
        raise ExecutionPreconditionViolated(errors)
    return _Machine(graph).run(program)
