"""Answer canonicalization for scoring and deduplication.

Text mode: lowercase, NFC, whitespace collapse, strip terminal punctuation
and surrounding quotes, drop leading articles. Numeric mode: take the last
number token and render it as a canonical decimal. Both modes are idempotent;
the text pipeline runs to fixpoint because one pass can expose more work
("the 'answer'." loses quotes, then the dot, then the article).
"""
from __future__ import annotations

import re
import unicodedata
from decimal import Decimal, InvalidOperation

TEXT = "text"
NUMERIC = "numeric"

_MODES = (TEXT, NUMERIC)

_QUOTES = "\"'“”‘’"
_TERMINAL_PUNCT = ".,!?;:"
_ARTICLE_RE = re.compile(r"^(?:the|a|an)\s+")
_NUMBER_TOKEN_RE = re.compile(r"-?\d(?:[\d,]*\d)?(?:\.\d+)?")
_CURRENCY = "$€£¥₹"

_MAX_PASSES = 16


class NumericParseFailure(ValueError):
    """Numeric-mode text carries no number token."""


def _text_pass(value: str) -> str:
    value = unicodedata.normalize("NFC", value).lower()
    value = " ".join(value.split())
    value = value.strip(_QUOTES)
    while value and value[-1] in _TERMINAL_PUNCT:
        value = value[:-1]
    value = value.strip()
    value = _ARTICLE_RE.sub("", value)
    return value


def canonical_number(token: str) -> str:
    cleaned = token.replace(",", "")
    try:
        rendered = format(Decimal(cleaned).normalize(), "f")
    except InvalidOperation as exc:
        raise NumericParseFailure(f"not a number: {token!r}") from exc
    if rendered == "-0":
        rendered = "0"
    return rendered


def normalize_answer(text: str, mode: str = TEXT) -> str:
    """Return the canonical form of an answer under the given mode."""
    if mode not in _MODES:
        raise ValueError(f"unknown answer mode {mode!r}")
    if mode == NUMERIC:
        stripped = "".join(ch for ch in text if ch not in _CURRENCY)
        tokens = _NUMBER_TOKEN_RE.findall(stripped)
        if not tokens:
            raise NumericParseFailure(f"no number token in {text!r}")
        return canonical_number(tokens[-1])
    value = text
    for _ in range(_MAX_PASSES):
        nxt = _text_pass(value)
        if nxt == value:
            return value
        value = nxt
    return value


def answer_matches(candidate: str, gold: str, mode: str = TEXT) -> bool:
    """Decide whether a candidate answer matches a gold answer under the mode."""
    if mode == NUMERIC:
        try:
            a = Decimal(normalize_answer(candidate, NUMERIC))
            b = Decimal(normalize_answer(gold, NUMERIC))
        except NumericParseFailure:
            return False
        if a == b:
            return True
        scale = max(abs(a), abs(b))
        return scale != 0 and abs(a - b) <= Decimal("1e-9") * scale
    return normalize_answer(candidate, TEXT) == normalize_answer(gold, TEXT)
