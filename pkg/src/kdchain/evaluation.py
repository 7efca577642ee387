"""Dataset loading, method execution, HIT@K scoring, perturbations, reports.

HIT@K for one (method, dataset) cell is M/N: the share of questions whose
gold answer appears within the top K ranked candidates. Report tables carry
per-dataset rows plus an unweighted average row per method.
"""
from __future__ import annotations

import hashlib
import json
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Optional, Sequence, Union

from .chain import ChainError, ChainRunner, rank_answers
from .gateway import (
    DecodeParams,
    GatewayError,
    Message,
    PromptBundle,
    Provider,
    RetryPolicy,
    Transcript,
    complete,
)
from .kgstore import Graph, normalize_label
from .normalize import NUMERIC, TEXT, answer_matches, normalize_answer

DATASETS = ("webqsp", "cwq", "gsm8k", "mwp", "drspider", "synthetic")
NUMERIC_DATASETS = ("gsm8k", "mwp")
METHODS = ("kdcm-code", "kdcm-plain", "retrieval-only")
PERTURB_KINDS = ("paraphrase-swap", "distractor-insert", "entity-alias")

CLEAN = "CLEAN"
DEGRADED = "DEGRADED"
STATUS_NA = "N/A"

DEFAULT_K_LIST = (1, 3, 5)


class ConfigError(Exception):
    """Bad run configuration detected before any work starts."""


class SchemaError(ValueError):
    def __init__(self, line: int, fieldname: str, reason: str):
        super().__init__(f"line {line}: field {fieldname!r}: {reason}")
        self.line = line
        self.field = fieldname
        self.reason = reason


class DuplicateId(ValueError):
    pass


class EmptyRecordSet(ValueError):
    pass


@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    dataset: str
    answer_mode: str = TEXT
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.id:
            raise ValueError("item id must be non-empty")
        if not self.question:
            raise ValueError("question must be non-empty")
        if not self.gold_answers:
            raise ValueError("gold answers must be non-empty")
        if self.dataset not in DATASETS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.answer_mode not in (TEXT, NUMERIC):
            raise ValueError(f"unknown answer mode {self.answer_mode!r}")
        if self.answer_mode == NUMERIC:
            for gold in self.gold_answers:
                normalize_answer(gold, NUMERIC)  # raises when not a number


@dataclass(frozen=True)
class EvalRecord:
    item_id: str
    method: str
    candidates: tuple[str, ...]
    first_correct_rank: Optional[int]
    chain_status: str

    def __post_init__(self):
        if self.first_correct_rank is not None and not (
            1 <= self.first_correct_rank <= len(self.candidates)
        ):
            raise ValueError("first_correct_rank must index a candidate")
        if self.chain_status not in (CLEAN, DEGRADED, STATUS_NA):
            raise ValueError(f"unknown chain status {self.chain_status!r}")


@dataclass(frozen=True)
class HitReport:
    method: str
    dataset: str
    n: int
    hit_at: dict[int, float]


# -- dataset loading --------------------------------------------------------


def load_dataset(path: Union[str, Path], expected: Optional[str] = None) -> list[EvalItem]:
    """Read one EvalItem per JSONL line; ids must be unique.

    gsm8k and mwp items are numeric-mode regardless of the line's "mode".
    """
    items: list[EvalItem] = []
    seen: set[str] = set()
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                data = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "-", f"not valid JSON: {exc}")
            if not isinstance(data, dict):
                raise SchemaError(lineno, "-", "line is not a JSON object")
            item_id = data.get("id")
            if not isinstance(item_id, str) or not item_id:
                raise SchemaError(lineno, "id", "missing or empty")
            if item_id in seen:
                raise DuplicateId(f"line {lineno}: duplicate id {item_id!r}")
            seen.add(item_id)
            question = data.get("question")
            if not isinstance(question, str) or not question.strip():
                raise SchemaError(lineno, "question", "missing or empty")
            answers = data.get("answers")
            if not isinstance(answers, list) or not answers or not all(
                isinstance(a, str) and a for a in answers
            ):
                raise SchemaError(lineno, "answers", "must be a non-empty list of strings")
            dataset = data.get("dataset")
            if dataset not in DATASETS:
                raise SchemaError(lineno, "dataset", f"must be one of {', '.join(DATASETS)}")
            if expected is not None and dataset != expected:
                raise SchemaError(lineno, "dataset", f"expected {expected!r}, got {dataset!r}")
            mode = data.get("mode", TEXT)
            if mode not in (TEXT, NUMERIC):
                raise SchemaError(lineno, "mode", "must be 'text' or 'numeric'")
            if dataset in NUMERIC_DATASETS:
                mode = NUMERIC
            try:
                items.append(EvalItem(item_id, question.strip(), tuple(answers), dataset, mode))
            except ValueError as exc:
                raise SchemaError(lineno, "answers", str(exc))
    return items


# -- scoring ----------------------------------------------------------------


def first_correct_rank(candidates: Sequence[str], item: EvalItem) -> Optional[int]:
    for rank, candidate in enumerate(candidates, start=1):
        if any(answer_matches(candidate, gold, item.answer_mode) for gold in item.gold_answers):
            return rank
    return None


def hit_at_k(records: Sequence[EvalRecord], k: int) -> float:
    if not records:
        raise EmptyRecordSet("hit_at_k needs at least one record")
    if k < 1:
        raise ValueError("K must be a positive integer")
    if len({r.method for r in records}) > 1:
        raise ValueError("records mix methods")
    hits = sum(1 for r in records if r.first_correct_rank is not None and r.first_correct_rank <= k)
    return hits / len(records)


def make_report(
    method: str,
    dataset: str,
    records: Sequence[EvalRecord],
    k_list: Sequence[int] = DEFAULT_K_LIST,
) -> HitReport:
    return HitReport(method, dataset, len(records), {k: hit_at_k(records, k) for k in k_list})


# -- method execution -------------------------------------------------------

_RETRIEVAL_FACT_CAP = 50

_RETRIEVAL_PROMPT = """\
Question: {question}

Context facts:
{facts}

Give up to 5 ranked answers, best first, one per line. Reply with only the answers.
"""


def _question_entities(question: str, graph: Graph) -> tuple[str, ...]:
    text = normalize_label(question)
    found: set[str] = set()
    for label, ids in graph.normalized_labels.items():
        if re.search(rf"(?<![a-z0-9_]){re.escape(label)}(?![a-z0-9_])", text):
            found.update(ids)
    return tuple(sorted(found))


def retrieval_prompt(question: str, graph: Graph) -> str:
    facts: list[str] = []
    seen: set = set()
    for entity in _question_entities(question, graph):
        for triple in graph.triples_of(entity):
            if triple not in seen:
                seen.add(triple)
                obj = triple.obj.value
                facts.append(f"{triple.subject} {triple.predicate} {obj}")
    facts = facts[:_RETRIEVAL_FACT_CAP]
    return _RETRIEVAL_PROMPT.format(question=question, facts="\n".join(facts) or "(none found)")


def _run_retrieval_only(
    item: EvalItem,
    graph: Graph,
    provider: Provider,
    params: DecodeParams,
    transcript: Optional[Transcript],
    retry: Optional[RetryPolicy],
) -> EvalRecord:
    bundle = PromptBundle((Message("user", retrieval_prompt(item.question, graph)),), params)
    completion = complete(bundle, provider, transcript=transcript, retry=retry)
    candidates = rank_answers(completion.candidates)
    return EvalRecord(item.id, "retrieval-only", candidates, first_correct_rank(candidates, item), STATUS_NA)


def run_method(
    method: str,
    items: Sequence[EvalItem],
    graph: Graph,
    provider: Provider,
    *,
    jobs: int = 1,
    params: Optional[DecodeParams] = None,
    transcript: Optional[Transcript] = None,
    retry: Optional[RetryPolicy] = None,
) -> list[EvalRecord]:
    """Evaluate every item under one method; item failures score as misses, never abort."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if not items:
        raise ConfigError("no items to evaluate")
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    params = params or DecodeParams()

    def evaluate(item: EvalItem) -> EvalRecord:
        try:
            if method == "retrieval-only":
                return _run_retrieval_only(item, graph, provider, params, transcript, retry)
            runner = ChainRunner(
                graph,
                provider,
                verification=(method == "kdcm-code"),
                params=params,
                transcript=transcript,
                retry=retry,
            )
            outcome = runner.run(item.question)
            candidates = outcome.chain.final_answers
            return EvalRecord(
                item.id,
                method,
                candidates,
                first_correct_rank(candidates, item),
                outcome.chain.status,
            )
        except (ChainError, GatewayError):
            return EvalRecord(item.id, method, (), None, STATUS_NA)

    if jobs == 1:
        return [evaluate(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(evaluate, items))


# -- perturbations ----------------------------------------------------------

_SYNONYMS = (
    ("what is", "tell me"),
    ("who is", "name the person who is"),
    ("which", "what"),
    ("where does", "in which place does"),
    ("how many", "what number of"),
    ("capital of", "capital city of"),
    ("currency", "money"),
    ("language", "tongue"),
)

_DISTRACTORS = (
    "Many atlases print such facts in an appendix.",
    "This comes up in pub quizzes all the time.",
    "A well-known almanac lists it on its first page.",
    "Travel guides tend to mention it in passing.",
    "It featured in a crossword puzzle last week.",
    "Schoolbooks often cover it in an early chapter.",
)


def _perturb_rng(item: EvalItem, kind: str) -> random.Random:
    digest = hashlib.sha256(f"{item.id}:{kind}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _flagged(item: EvalItem, kind: str) -> EvalItem:
    return replace(item, flags=item.flags + (f"no-applicable-rule:{kind}",))


def _paraphrase_swap(item: EvalItem) -> Optional[str]:
    question = item.question
    changed = False
    for pattern, substitute in _SYNONYMS:
        new = re.sub(re.escape(pattern), substitute, question, flags=re.IGNORECASE)
        if new != question:
            changed = True
            question = new
    return question if changed else None


def _entity_alias(item: EvalItem, graph: Optional[Graph], rng: random.Random) -> Optional[str]:
    if graph is None:
        return None
    text = normalize_label(item.question)
    # Longest label first so "new zealand" wins over any shorter overlap.
    matches: list[tuple[str, str]] = []
    for label, ids in sorted(graph.normalized_labels.items(), key=lambda kv: (-len(kv[0]), kv[0])):
        if not re.search(rf"(?<![a-z0-9_]){re.escape(label)}(?![a-z0-9_])", text):
            continue
        for entity in sorted(ids):
            aliases = [a for a in graph.labels_of(entity) if normalize_label(a) != label]
            if aliases:
                matches.append((label, rng.choice(sorted(aliases))))
                break
        if matches:
            break
    if not matches:
        return None
    label, alias = matches[0]
    pattern = re.compile(r"\s+".join(re.escape(part) for part in label.split()), re.IGNORECASE)
    new = pattern.sub(alias, item.question, count=1)
    return new if new != item.question else None


def perturb(item: EvalItem, kind: str, *, graph: Optional[Graph] = None) -> EvalItem:
    """Deterministic rule-based question rewrite; gold answers never change."""
    if kind not in PERTURB_KINDS:
        raise ValueError(f"unknown perturbation kind {kind!r}")
    rng = _perturb_rng(item, kind)
    if kind == "paraphrase-swap":
        question = _paraphrase_swap(item)
    elif kind == "distractor-insert":
        question = item.question + " " + rng.choice(_DISTRACTORS)
    else:
        question = _entity_alias(item, graph, rng)
    if question is None:
        return _flagged(item, kind)
    return replace(item, question=question)


# -- report rendering -------------------------------------------------------


@dataclass(frozen=True)
class ReportDocument:
    text: str
    csv: str
    averages: dict[str, dict[int, Decimal]]  # method -> K -> unrounded percentage


def _percent(fraction: Union[float, Decimal]) -> Decimal:
    return Decimal(str(fraction)) * Decimal(100)


def _render_percent(pct: Decimal) -> str:
    return str(pct.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def report(reports: Sequence[HitReport]) -> ReportDocument:
    """Aligned-text and CSV tables with one unweighted average row per method."""
    if not reports:
        raise EmptyRecordSet("report needs at least one HitReport")
    k_list = sorted(reports[0].hit_at)
    for r in reports:
        if sorted(r.hit_at) != k_list:
            raise ValueError("reports disagree on K values")

    methods: list[str] = []
    for r in reports:
        if r.method not in methods:
            methods.append(r.method)

    rows: list[tuple[str, str, str, list[str]]] = []
    averages: dict[str, dict[int, Decimal]] = {}
    csv_lines = ["method,dataset,n," + ",".join(f"hit{k}" for k in k_list)]
    for method in methods:
        group = [r for r in reports if r.method == method]
        for r in group:
            cells = [_render_percent(_percent(r.hit_at[k])) for k in k_list]
            rows.append((method, r.dataset, str(r.n), cells))
            csv_lines.append(f"{method},{r.dataset},{r.n}," + ",".join(cells))
        avg = {k: sum(_percent(r.hit_at[k]) for r in group) / len(group) for k in k_list}
        averages[method] = avg
        total_n = sum(r.n for r in group)
        cells = [_render_percent(avg[k]) for k in k_list]
        rows.append((method, "average", str(total_n), cells))
        csv_lines.append(f"{method},average,{total_n}," + ",".join(cells))

    headers = ["method", "dataset", "n"] + [f"hit@{k}" for k in k_list]
    table = [headers] + [[m, d, n] + cells for m, d, n, cells in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    text_lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in table]
    return ReportDocument("\n".join(text_lines) + "\n", "\n".join(csv_lines) + "\n", averages)


def parse_report_csv(text: str) -> list[dict[str, object]]:
    lines = [line for line in text.splitlines() if line.strip()]
    header = lines[0].split(",")
    out = []
    for line in lines[1:]:
        cells = line.split(",")
        row: dict[str, object] = {}
        for key, cell in zip(header, cells):
            if key.startswith("hit"):
                row[key] = Decimal(cell)
            elif key == "n":
                row[key] = int(cell)
            else:
                row[key] = cell
        out.append(row)
    return out


# -- record persistence -----------------------------------------------------


def write_records(records: Sequence[EvalRecord], path: Union[str, Path]) -> None:
    """One sorted-keys JSON object per line; no timestamps, so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "item_id": r.item_id,
                        "method": r.method,
                        "candidates": list(r.candidates),
                        "first_correct_rank": r.first_correct_rank,
                        "chain_status": r.chain_status,
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_records(path: Union[str, Path]) -> list[EvalRecord]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            data = json.loads(line)
            out.append(
                EvalRecord(
                    data["item_id"],
                    data["method"],
                    tuple(data["candidates"]),
                    data["first_correct_rank"],
                    data["chain_status"],
                )
            )
    return out
