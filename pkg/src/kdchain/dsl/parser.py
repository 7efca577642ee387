"""Tokenizer and recursive-descent parser for the traversal language.

Grammar:

    program := stmt+
    stmt    := "let" IDENT "=" expr ";" | "return" expr ";"
    expr    := source step*
    source  := "entity(" STRING ")" | IDENT
    step    := ".out(" IDENT ")" | ".in(" IDENT ")"
             | ".filter(" CMP NUMBER_OR_STRING ")"
             | ".union(" IDENT ")" | ".intersect(" IDENT ")" | ".limit(" INT ")"
    CMP     := "==" | "!=" | "<" | "<=" | ">" | ">="

Exactly one return statement is allowed and it must come last. Variables
must be bound by an earlier let before use. Diagnostic spans are byte
offsets into the UTF-8 encoding of the source text.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import (
    ERROR,
    MAX_STATEMENTS,
    SYNTAX,
    UNBOUND_VAR,
    Diagnostic,
    EntityRef,
    Expr,
    FilterStep,
    InStep,
    IntersectStep,
    LetStmt,
    LimitStep,
    OutStep,
    ParseError,
    Program,
    ReturnStmt,
    Statement,
    Step,
    UnionStep,
    VarRef,
)

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")

_KEYWORDS = ("let", "return")
_CMP_OPS = ("==", "!=", "<=", ">=", "<", ">")

_ESCAPES = {'"': '"', "\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


@dataclass(frozen=True)
class _Token:
    kind: str  # IDENT NUMBER STRING PUNCT CMP EOF
    text: str
    value: str
    start: int  # byte offset
    end: int


def _syntax(span: tuple[int, int], message: str) -> ParseError:
    return ParseError(Diagnostic(ERROR, SYNTAX, span, message))


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    i = 0  # char index
    b = 0  # byte index
    n = len(source)

    def advance(count: int = 1) -> None:
        nonlocal i, b
        for _ in range(count):
            b += len(source[i].encode("utf-8"))
            i += 1

    while i < n:
        ch = source[i]
        if ch.isspace():
            advance()
            continue
        start_b = b
        if ch == '"':
            advance()
            parts: list[str] = []
            raw = ['"']
            while True:
                if i >= n:
                    raise _syntax((start_b, b), "unterminated string")
                ch = source[i]
                if ch == '"':
                    raw.append('"')
                    advance()
                    break
                if ch == "\\":
                    if i + 1 >= n:
                        raise _syntax((start_b, b), "unterminated string escape")
                    esc = source[i + 1]
                    if esc not in _ESCAPES:
                        raise _syntax((b, b + 2), f"unsupported escape \\{esc}")
                    parts.append(_ESCAPES[esc])
                    raw.append("\\" + esc)
                    advance(2)
                else:
                    parts.append(ch)
                    raw.append(ch)
                    advance()
            tokens.append(_Token("STRING", "".join(raw), "".join(parts), start_b, b))
            continue
        m = _IDENT_RE.match(source, i)
        if m and m.start() == i:
            text = m.group()
            advance(len(text))
            tokens.append(_Token("IDENT", text, text, start_b, b))
            continue
        m = _NUMBER_RE.match(source, i)
        if m and m.start() == i:
            text = m.group()
            advance(len(text))
            tokens.append(_Token("NUMBER", text, text, start_b, b))
            continue
        two = source[i : i + 2]
        if two in ("==", "!=", "<=", ">="):
            advance(2)
            tokens.append(_Token("CMP", two, two, start_b, b))
            continue
        if ch in "<>":
            advance()
            tokens.append(_Token("CMP", ch, ch, start_b, b))
            continue
        if ch in ".();=":
            advance()
            tokens.append(_Token("PUNCT", ch, ch, start_b, b))
            continue
        advance()
        raise _syntax((start_b, b), f"unexpected character {ch!r}")
    tokens.append(_Token("EOF", "", "", b, b))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0
        self.bound: set[str] = set()

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_punct(self, text: str, what: str) -> _Token:
        tok = self.next()
        if tok.kind != "PUNCT" or tok.text != text:
            raise _syntax((tok.start, tok.end), f"expected {what}, got {tok.text or 'end of input'!r}")
        return tok

    def expect_ident(self, what: str) -> _Token:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text in _KEYWORDS:
            raise _syntax((tok.start, tok.end), f"expected {what}, got {tok.text or 'end of input'!r}")
        return tok

    def parse_program(self) -> Program:
        statements: list[Statement] = []
        saw_return = False
        while self.peek().kind != "EOF":
            stmt = self.parse_statement()
            if saw_return:
                # The previous return was not the final statement.
                prev = statements[-1]
                raise _syntax(prev.span, "return must be the final statement")
            if isinstance(stmt, ReturnStmt):
                saw_return = True
            statements.append(stmt)
            if len(statements) > MAX_STATEMENTS:
                raise _syntax(stmt.span, f"program too long: more than {MAX_STATEMENTS} statements")
        if not statements:
            tok = self.peek()
            raise _syntax((tok.start, tok.end), "empty program")
        if not saw_return:
            last = statements[-1]
            raise _syntax(last.span, "program must end with a return statement")
        return Program(tuple(statements))

    def parse_statement(self) -> Statement:
        tok = self.next()
        if tok.kind == "IDENT" and tok.text == "let":
            name = self.expect_ident("variable name")
            eq = self.next()
            if eq.kind != "PUNCT" or eq.text != "=":
                raise _syntax((eq.start, eq.end), f"expected '=', got {eq.text!r}")
            expr = self.parse_expr()
            end = self.expect_punct(";", "';' after statement")
            self.bound.add(name.text)
            return LetStmt(name.text, expr, (tok.start, end.end))
        if tok.kind == "IDENT" and tok.text == "return":
            expr = self.parse_expr()
            end = self.expect_punct(";", "';' after statement")
            return ReturnStmt(expr, (tok.start, end.end))
        raise _syntax((tok.start, tok.end), f"expected 'let' or 'return', got {tok.text or 'end of input'!r}")

    def parse_expr(self) -> Expr:
        source = self.parse_source()
        steps: list[Step] = []
        while self.peek().kind == "PUNCT" and self.peek().text == ".":
            self.next()
            steps.append(self.parse_step())
        return Expr(source, tuple(steps))

    def parse_source(self):
        tok = self.next()
        if tok.kind == "IDENT" and tok.text == "entity" and self.peek().text == "(":
            self.next()
            arg = self.next()
            if arg.kind != "STRING":
                raise _syntax((arg.start, arg.end), "entity() takes a double-quoted label or id")
            end = self.expect_punct(")", "')' after entity argument")
            return EntityRef(arg.value, (tok.start, end.end))
        if tok.kind == "IDENT" and tok.text not in _KEYWORDS:
            if tok.text not in self.bound:
                raise ParseError(
                    Diagnostic(ERROR, UNBOUND_VAR, (tok.start, tok.end), f"variable {tok.text!r} used before let")
                )
            return VarRef(tok.text, (tok.start, tok.end))
        raise _syntax((tok.start, tok.end), f"expected entity(...) or a variable, got {tok.text or 'end of input'!r}")

    def parse_step(self) -> Step:
        name = self.next()
        if name.kind != "IDENT":
            raise _syntax((name.start, name.end), f"expected a step name after '.', got {name.text!r}")
        self.expect_punct("(", f"'(' after .{name.text}")
        step: Step
        if name.text in ("out", "in"):
            rel = self.expect_ident("relation name")
            end = self.expect_punct(")", "')'")
            cls = OutStep if name.text == "out" else InStep
            step = cls(rel.text, (name.start, end.end))
        elif name.text == "filter":
            op = self.next()
            if op.kind != "CMP":
                raise _syntax((op.start, op.end), f"expected a comparison operator, got {op.text!r}")
            arg = self.next()
            if arg.kind not in ("NUMBER", "STRING"):
                raise _syntax((arg.start, arg.end), "filter takes a number or a double-quoted string")
            end = self.expect_punct(")", "')'")
            step = FilterStep(op.text, arg.value, arg.kind == "STRING", (name.start, end.end))
        elif name.text in ("union", "intersect"):
            var = self.expect_ident("variable name")
            if var.text not in self.bound:
                raise ParseError(
                    Diagnostic(ERROR, UNBOUND_VAR, (var.start, var.end), f"variable {var.text!r} used before let")
                )
            end = self.expect_punct(")", "')'")
            cls = UnionStep if name.text == "union" else IntersectStep
            step = cls(var.text, (name.start, end.end))
        elif name.text == "limit":
            num = self.next()
            if num.kind != "NUMBER" or "." in num.text:
                raise _syntax((num.start, num.end), "limit takes an integer")
            count = int(num.text)
            if count < 1:
                raise _syntax((num.start, num.end), "limit must be at least 1")
            end = self.expect_punct(")", "')'")
            step = LimitStep(count, (name.start, end.end))
        else:
            raise _syntax((name.start, name.end), f"unknown step .{name.text}")
        return step


def parse(source: str) -> Program:
    """Parse program text, raising ParseError with the first blocking diagnostic."""
    tokens = _tokenize(source)
    return _Parser(tokens).parse_program()
