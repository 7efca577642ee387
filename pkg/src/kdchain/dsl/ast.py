"""AST nodes, diagnostics, and result values for the traversal language."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

from ..kgstore import Term, Triple

ERROR = "error"
WARNING = "warning"

SYNTAX = "SYNTAX"
UNBOUND_VAR = "UNBOUND_VAR"
UNKNOWN_RELATION = "UNKNOWN_RELATION"
UNKNOWN_ENTITY = "UNKNOWN_ENTITY"

# Hard cap on statements per program; exceeding it is a SYNTAX error.
MAX_STATEMENTS = 32

Span = tuple[int, int]
_NO_SPAN: Span = (0, 0)


@dataclass(frozen=True)
class Diagnostic:
    severity: str
    code: str
    span: Span
    message: str

    def __post_init__(self):
        if self.code in (SYNTAX, UNBOUND_VAR) and self.severity != ERROR:
            raise ValueError(f"{self.code} diagnostics are always errors")

    @property
    def is_error(self) -> bool:
        return self.severity == ERROR


@dataclass(frozen=True)
class EntityRef:
    text: str
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class VarRef:
    name: str
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


Source = Union[EntityRef, VarRef]


@dataclass(frozen=True)
class OutStep:
    relation: str
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class InStep:
    relation: str
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class FilterStep:
    op: str  # == != < <= > >=
    value: str  # literal text; unescaped when quoted
    quoted: bool
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class UnionStep:
    var: str
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class IntersectStep:
    var: str
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class LimitStep:
    count: int
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


Step = Union[OutStep, InStep, FilterStep, UnionStep, IntersectStep, LimitStep]


@dataclass(frozen=True)
class Expr:
    source: Source
    steps: tuple[Step, ...] = ()


@dataclass(frozen=True)
class LetStmt:
    name: str
    expr: Expr
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class ReturnStmt:
    expr: Expr
    span: Span = field(default=_NO_SPAN, compare=False, repr=False)


Statement = Union[LetStmt, ReturnStmt]


@dataclass(frozen=True)
class Program:
    statements: tuple[Statement, ...]


@dataclass(frozen=True)
class ResultSet:
    """Execution output: unique ordered values plus the triples traversed."""

    values: tuple[Term, ...]
    provenance: tuple[Triple, ...]

    @property
    def value_strings(self) -> tuple[str, ...]:
        return tuple(t.value for t in self.values)


class ParseError(Exception):
    """Raised by parse() with the first blocking diagnostic."""

    def __init__(self, diagnostic: Diagnostic):
        super().__init__(diagnostic.message)
        self.diagnostic = diagnostic


class ExecutionPreconditionViolated(RuntimeError):
    """execute() was called while error diagnostics are outstanding."""

    def __init__(self, diagnostics: tuple[Diagnostic, ...]):
        msgs = "; ".join(d.message for d in diagnostics)
        super().__init__(f"program has unresolved error diagnostics: {msgs}")
        self.diagnostics = diagnostics
