"""Static checks of a parsed program against a graph.

Syntax and variable binding are already settled by the parser; validation
adds the graph-dependent checks. Every failing occurrence produces its own
diagnostic so a repair prompt can list them all at once.
"""
from __future__ import annotations

from ..kgstore import Graph
from .ast import (
    ERROR,
    UNKNOWN_ENTITY,
    UNKNOWN_RELATION,
    Diagnostic,
    EntityRef,
    Expr,
    InStep,
    OutStep,
    Program,
)


def validate(program: Program, graph: Graph) -> tuple[Diagnostic, ...]:
    """Check relation and entity references; empty result means executable."""
    diagnostics: list[Diagnostic] = []

    def check_expr(expr: Expr) -> None:
        src = expr.source
        if isinstance(src, EntityRef):
            ids = graph.resolve_label(src.text)
            if not ids and not graph.has_entity(src.text):
                diagnostics.append(
                    Diagnostic(ERROR, UNKNOWN_ENTITY, src.span, f"unknown entity {src.text!r}")
                )
        for step in expr.steps:
            if isinstance(step, (OutStep, InStep)):
                if not graph.has_relation(step.relation):
                    diagnostics.append(
                        Diagnostic(ERROR, UNKNOWN_RELATION, step.span, f"unknown relation {step.relation!r}")
                    )

    for stmt in program.statements:
        check_expr(stmt.expr)
    return tuple(diagnostics)
