"""Independent naive interpreter used as an execution oracle.

Deliberately written from the language rules alone, with plain dict/set
plumbing and none of the production interpreter's machinery. Returns the
final statement's value set as a set of (value, kind) pairs.
"""
from __future__ import annotations

import re
from decimal import Decimal

from kdchain.dsl.ast import (
    EntityRef,
    FilterStep,
    InStep,
    IntersectStep,
    LetStmt,
    LimitStep,
    OutStep,
    Program,
    ReturnStmt,
    UnionStep,
    VarRef,
)
from kdchain.kgstore import ENTITY, Graph, normalize_label

_NUM = re.compile(r"-?\d+(\.\d+)?\Z")

Pair = tuple[str, str]  # (value, kind)


def _adjacency(graph: Graph):
    fwd: dict[tuple[str, str], set[Pair]] = {}
    bwd: dict[tuple[str, str], set[Pair]] = {}
    for t in graph:
        fwd.setdefault((t.subject, t.predicate), set()).add((t.obj.value, t.obj.kind))
        bwd.setdefault((t.obj.value, t.predicate), set()).add((t.subject, ENTITY))
    return fwd, bwd


def _cmp(left: str, op: str, right: str) -> bool:
    if _NUM.match(left) and _NUM.match(right):
        a, b = Decimal(left), Decimal(right)
    else:
        a, b = left, right
    return {
        "==": a == b,
        "!=": a != b,
        "<": a < b,
        "<=": a <= b,
        ">": a > b,
        ">=": a >= b,
    }[op]


def naive_execute(program: Program, graph: Graph) -> set[Pair]:
    fwd, bwd = _adjacency(graph)
    env: dict[str, set[Pair]] = {}
    final: set[Pair] = set()

    def source_set(source) -> set[Pair]:
        if isinstance(source, VarRef):
            return set(env[source.name])
        assert isinstance(source, EntityRef)
        # Language rule: label match wins; a bare id only resolves when no label matches.
        ids = set(graph.normalized_labels.get(normalize_label(source.text), frozenset()))
        if not ids and source.text in graph.entities:
            ids = {source.text}
        return {(i, ENTITY) for i in ids}

    def apply(current: set[Pair], step) -> set[Pair]:
        if isinstance(step, OutStep):
            result: set[Pair] = set()
            for value, _kind in current:
                result |= fwd.get((value, step.relation), set())
            return result
        if isinstance(step, InStep):
            result = set()
            for value, _kind in current:
                result |= bwd.get((value, step.relation), set())
            return result
        if isinstance(step, FilterStep):
            return {p for p in current if _cmp(p[0], step.op, step.value)}
        if isinstance(step, UnionStep):
            return current | env[step.var]
        if isinstance(step, IntersectStep):
            return current & env[step.var]
        if isinstance(step, LimitStep):
            return set(sorted(current)[: step.count])
        raise AssertionError(f"unknown step {step!r}")

    for stmt in program.statements:
        current = source_set(stmt.expr.source)
        for step in stmt.expr.steps:
            current = apply(current, step)
        if isinstance(stmt, LetStmt):
            env[stmt.name] = current
        else:
            assert isinstance(stmt, ReturnStmt)
            final = current
    return final
