"""Embedded, read-only triple store.

Facts are (subject, predicate, object) triples over opaque string tokens.
Objects are either entity ids or typed literals (integer/decimal/text).
A Graph is immutable once loaded and safe to share across threads.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from io import TextIOBase
from pathlib import Path
from typing import Iterable, Iterator, Mapping

ENTITY = "entity"
INTEGER = "integer"
DECIMAL = "decimal"
TEXT = "text"

_INT_RE = re.compile(r"^[+-]?\d+$")
_DECIMAL_RE = re.compile(r"^[+-]?(?:\d+\.\d*|\.\d+)$")
_NT_TERM_RE = re.compile(r'<[^>]*>|"(?:[^"\\]|\\.)*"|\S+')

# Predicate that also binds a display label to its subject.
LABEL_PREDICATE = "label"


@dataclass(frozen=True, order=True)
class Term:
    """A graph value: an entity id or a typed literal."""

    value: str
    kind: str = ENTITY

    @property
    def is_literal(self) -> bool:
        return self.kind != ENTITY


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    predicate: str
    obj: Term


class MalformedRecord(ValueError):
    """A source line that does not parse as a triple record."""

    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


def normalize_label(label: str) -> str:
    """Whitespace-collapsed, case-folded form used for label lookups."""
    return " ".join(label.split()).casefold()


def _type_literal_text(text: str) -> Term:
    if _INT_RE.match(text):
        return Term(text, INTEGER)
    if _DECIMAL_RE.match(text):
        return Term(text, DECIMAL)
    return Term(text, TEXT)


def _object_term(field: str) -> Term:
    # Quoted objects are literals; unquoted numerics are literals; a bare
    # token is an entity id; anything with whitespace falls back to text.
    if len(field) >= 2 and field.startswith('"') and field.endswith('"'):
        return _type_literal_text(field[1:-1])
    if _INT_RE.match(field) or _DECIMAL_RE.match(field):
        return _type_literal_text(field)
    if re.search(r"\s", field):
        return Term(field, TEXT)
    return Term(field, ENTITY)


def _unescape_nt(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            out.append({"n": "\n", "t": "\t", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


class Graph:
    """Immutable set of triples with forward/backward adjacency and label lookup."""

    def __init__(
        self,
        triples: Iterable[Triple],
        label_bindings: Iterable[tuple[str, str]] = (),
        malformed: Iterable[MalformedRecord] = (),
    ):
        self._triples = frozenset(triples)
        self._bindings = frozenset(label_bindings)
        self.malformed = tuple(malformed)

        out: dict[str, dict[str, list[Triple]]] = {}
        inn: dict[str, dict[str, list[Triple]]] = {}
        relations: set[str] = set()
        entities: set[str] = set()
        for t in self._triples:
            out.setdefault(t.subject, {}).setdefault(t.predicate, []).append(t)
            inn.setdefault(t.obj.value, {}).setdefault(t.predicate, []).append(t)
            relations.add(t.predicate)
            entities.add(t.subject)
            if t.obj.kind == ENTITY:
                entities.add(t.obj.value)
        for by_pred in out.values():
            for pred in by_pred:
                by_pred[pred] = sorted(by_pred[pred])
        for by_pred in inn.values():
            for pred in by_pred:
                by_pred[pred] = sorted(by_pred[pred])

        labels: dict[str, set[str]] = {}
        entity_labels: dict[str, set[str]] = {}
        for entity_id, display in self._bindings:
            labels.setdefault(normalize_label(display), set()).add(entity_id)
            entity_labels.setdefault(entity_id, set()).add(display)
            entities.add(entity_id)

        self._out = out
        self._in = inn
        self._relations = frozenset(relations)
        self._entities = frozenset(entities)
        self._labels = {k: frozenset(v) for k, v in labels.items()}
        self._entity_labels = {k: tuple(sorted(v)) for k, v in entity_labels.items()}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self._triples == other._triples and self._bindings == other._bindings

    __hash__ = None  # type: ignore[assignment]

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples))

    @property
    def relation_catalog(self) -> tuple[str, ...]:
        return tuple(sorted(self._relations))

    @property
    def entities(self) -> frozenset[str]:
        return self._entities

    @property
    def normalized_labels(self) -> Mapping[str, frozenset[str]]:
        return self._labels

    def has_relation(self, relation: str) -> bool:
        return relation in self._relations

    def has_entity(self, node: str) -> bool:
        return node in self._entities

    def contains(self, triple: Triple) -> bool:
        return triple in self._triples

    def edges(self, node: str, relation: str, direction: str = "out") -> tuple[Triple, ...]:
        """Triples matching (node, relation, *) or (*, relation, node) by value."""
        index = self._out if direction == "out" else self._in
        return tuple(index.get(node, {}).get(relation, ()))

    def neighbors(self, node: str, relation: str, direction: str = "out") -> tuple[Term, ...]:
        """Adjacent terms in lexicographic order; empty for unknown node/relation."""
        if direction not in ("out", "in"):
            raise ValueError(f"direction must be 'out' or 'in', got {direction!r}")
        if direction == "out":
            return tuple(sorted({t.obj for t in self.edges(node, relation, "out")}))
        return tuple(sorted({Term(t.subject) for t in self.edges(node, relation, "in")}))

    def resolve_label(self, label: str) -> tuple[str, ...]:
        """Entity ids bound to a display label, case-insensitively; sorted."""
        return tuple(sorted(self._labels.get(normalize_label(label), ())))

    def labels_of(self, entity_id: str) -> tuple[str, ...]:
        """Display labels registered for an entity, sorted."""
        return self._entity_labels.get(entity_id, ())

    def triples_of(self, entity_id: str) -> tuple[Triple, ...]:
        """All triples with the entity as subject or object, sorted, deduplicated."""
        found: set[Triple] = set()
        for by_pred in (self._out.get(entity_id, {}), self._in.get(entity_id, {})):
            for ts in by_pred.values():
                found.update(ts)
        return tuple(sorted(found))


def _parse_tsv_line(line: str, lineno: int) -> tuple[Triple, tuple[str, str] | None]:
    fields = line.split("\t")
    if len(fields) not in (3, 4):
        raise MalformedRecord(lineno, f"expected 3 or 4 tab-separated fields, got {len(fields)}")
    subject, predicate, obj = fields[0], fields[1], fields[2]
    if not subject or re.search(r"\s", subject):
        raise MalformedRecord(lineno, f"subject must be a non-empty token, got {subject!r}")
    if not predicate or re.search(r"\s", predicate):
        raise MalformedRecord(lineno, f"predicate must be a non-empty token, got {predicate!r}")
    if not obj:
        raise MalformedRecord(lineno, "empty object field")
    binding = None
    if len(fields) == 4:
        label = fields[3].strip()
        if not label:
            raise MalformedRecord(lineno, "empty label field")
        binding = (subject, label)
    return Triple(subject, predicate, _object_term(obj)), binding


def _parse_nt_line(line: str, lineno: int) -> tuple[Triple, tuple[str, str] | None]:
    terms = _NT_TERM_RE.findall(line)
    if terms and terms[-1] == ".":
        terms = terms[:-1]
    if len(terms) != 3:
        raise MalformedRecord(lineno, f"expected 3 terms, got {len(terms)}")

    def strip_iri(term: str) -> str:
        return term[1:-1] if term.startswith("<") and term.endswith(">") else term

    subject = strip_iri(terms[0])
    predicate = strip_iri(terms[1])
    if not subject or re.search(r"\s", subject):
        raise MalformedRecord(lineno, f"subject must be a non-empty token, got {subject!r}")
    if not predicate or re.search(r"\s", predicate):
        raise MalformedRecord(lineno, f"predicate must be a non-empty token, got {predicate!r}")
    raw_obj = terms[2]
    if raw_obj.startswith('"') and raw_obj.endswith('"') and len(raw_obj) >= 2:
        obj = _type_literal_text(_unescape_nt(raw_obj[1:-1]))
    else:
        stripped = strip_iri(raw_obj)
        if not stripped:
            raise MalformedRecord(lineno, "empty object term")
        obj = Term(stripped, ENTITY)
    return Triple(subject, predicate, obj), None


def load_graph(
    source: str | Path | TextIOBase,
    fmt: str = "tsv",
    *,
    lenient: bool = False,
) -> Graph:
    """Load a Graph from a TSV or NT-like triple document.

    ``source`` is a filesystem path or an open text stream. Lines starting
    with ``#`` and blank lines are skipped; duplicate triples are silently
    deduplicated. In strict mode the first malformed record aborts the load;
    with ``lenient=True`` malformed records are collected on ``Graph.malformed``.
    """
    if fmt in ("tsv", "tsv-triples"):
        parse_line = _parse_tsv_line
    elif fmt in ("nt", "nt-like"):
        parse_line = _parse_nt_line
    else:
        raise ValueError(f"unknown triple format {fmt!r}")

    if isinstance(source, (str, Path)):
        stream = open(source, encoding="utf-8")
        close = True
    else:
        stream = source
        close = False

    triples: set[Triple] = set()
    bindings: set[tuple[str, str]] = set()
    malformed: list[MalformedRecord] = []
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            try:
                triple, binding = parse_line(line, lineno)
            except MalformedRecord as exc:
                if not lenient:
                    raise
                malformed.append(exc)
                continue
            triples.add(triple)
            if binding is not None:
                bindings.add(binding)
            if triple.predicate == LABEL_PREDICATE and triple.obj.kind == TEXT:
                bindings.add((triple.subject, triple.obj.value))
    finally:
        if close:
            stream.close()
    return Graph(triples, bindings, malformed)
