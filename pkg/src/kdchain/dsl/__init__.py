"""Graph traversal language: parse, validate, execute, render."""
from .ast import (
    ERROR,
    MAX_STATEMENTS,
    SYNTAX,
    UNBOUND_VAR,
    UNKNOWN_ENTITY,
    UNKNOWN_RELATION,
    WARNING,
    Diagnostic,
    EntityRef,
    ExecutionPreconditionViolated,
    Expr,
    FilterStep,
    InStep,
    IntersectStep,
    LetStmt,
    LimitStep,
    OutStep,
    ParseError,
    Program,
    ResultSet,
    ReturnStmt,
    UnionStep,
    VarRef,
)
from .interpreter import execute
from .parser import parse
from .renderer import quote, render
from .validator import validate

# Compact grammar card embedded in generation and repair prompts.
LANGUAGE_REFERENCE = """\
Each statement is `let NAME = EXPR;` or `return EXPR;` (exactly one return,
last). An EXPR starts from `entity("label or id")` or a bound variable and
chains steps:
  .out(relation)     follow relation forward
  .in(relation)      follow relation backward
  .filter(OP value)  keep elements comparing true; OP is == != < <= > >=,
                     value is a number or a double-quoted string
  .union(name)       add another variable's elements
  .intersect(name)   keep only elements also in another variable
  .limit(n)          keep the first n elements in sorted order
Results are sets ordered lexicographically."""

__all__ = [
    "Diagnostic",
    "EntityRef",
    "ExecutionPreconditionViolated",
    "Expr",
    "FilterStep",
    "InStep",
    "IntersectStep",
    "LetStmt",
    "LimitStep",
    "OutStep",
    "ParseError",
    "Program",
    "ResultSet",
    "ReturnStmt",
    "UnionStep",
    "VarRef",
    "ERROR",
    "WARNING",
    "SYNTAX",
    "UNBOUND_VAR",
    "UNKNOWN_ENTITY",
    "UNKNOWN_RELATION",
    "MAX_STATEMENTS",
    "LANGUAGE_REFERENCE",
    "execute",
    "parse",
    "quote",
    "render",
    "validate",
]
