"""Canonical text rendering for traversal programs.

render(parse(text)) produces a normal form: one statement per line, single
spaces, double-quoted strings with minimal escaping. parse(render(p)) is
structurally equal to p.
"""
from __future__ import annotations

from .ast import (
    EntityRef,
    Expr,
    FilterStep,
    InStep,
    IntersectStep,
    LetStmt,
    LimitStep,
    OutStep,
    Program,
    ReturnStmt,
    Statement,
    Step,
    UnionStep,
    VarRef,
)

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t", "\r": "\\r"}


def quote(text: str) -> str:
    out = []
    for ch in text:
        out.append(_ESCAPES.get(ch, ch))
    return '"' + "".join(out) + '"'


def _render_step(step: Step) -> str:
    if isinstance(step, OutStep):
        return f".out({step.relation})"
    if isinstance(step, InStep):
        return f".in({step.relation})"
    if isinstance(step, FilterStep):
        arg = quote(step.value) if step.quoted else step.value
        return f".filter({step.op} {arg})"
    if isinstance(step, UnionStep):
        return f".union({step.var})"
    if isinstance(step, IntersectStep):
        return f".intersect({step.var})"
    if isinstance(step, LimitStep):
        return f".limit({step.count})"
    raise TypeError(f"not a step: {step!r}")


def _render_expr(expr: Expr) -> str:
    src = expr.source
    if isinstance(src, EntityRef):
        head = f"entity({quote(src.text)})"
    elif isinstance(src, VarRef):
        head = src.name
    else:
        raise TypeError(f"not a source: {src!r}")
    return head + "".join(_render_step(s) for s in expr.steps)


def _render_statement(stmt: Statement) -> str:
    if isinstance(stmt, LetStmt):
        return f"let {stmt.name} = {_render_expr(stmt.expr)};"
    if isinstance(stmt, ReturnStmt):
        return f"return {_render_expr(stmt.expr)};"
    raise TypeError(f"not a statement: {stmt!r}")


def render(program: Program) -> str:
    """Return the canonical single-statement-per-line text of a program."""
    return "\n".join(_render_statement(s) for s in program.statements)
