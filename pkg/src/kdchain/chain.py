"""Reasoning-chain pipeline: decompose, generate code-bearing steps, verify
them against the graph, repair failures, and assemble the grounded prompt.

Every step carries executable traversal code. A step enters the final prompt
as trusted context only with a SUPPORTED verdict; failed steps stay visible
as explicit warnings so the chain is honest about what it could not check.
"""
from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .dsl import (
    ERROR,
    LANGUAGE_REFERENCE,
    SYNTAX,
    Diagnostic,
    EntityRef,
    ExecutionPreconditionViolated,
    InStep,
    OutStep,
    ParseError,
    Program,
    ResultSet,
    execute,
    parse,
    render,
    validate,
)
from .dsl.renderer import quote
from .gateway import Completion, DecodeParams, Message, Provider, PromptBundle, RetryPolicy, Transcript, complete
from .kgstore import Graph, normalize_label
from .normalize import TEXT, normalize_answer

SUPPORTED = "SUPPORTED"
REFUTED = "REFUTED"
UNVERIFIABLE = "UNVERIFIABLE"
PENDING = "PENDING"
VERDICTS = (SUPPORTED, REFUTED, UNVERIFIABLE, PENDING)

CLEAN = "CLEAN"
DEGRADED = "DEGRADED"

ENTITY_FORM = "entity"
LITERAL_FORM = "literal"
BOOLEAN_FORM = "boolean"
FORMS = (ENTITY_FORM, LITERAL_FORM, BOOLEAN_FORM)

REPAIR_BUDGET = 2  # per step and per decomposition
MAX_SUBTASKS = 8
MAX_ANSWERS = 5
MAX_CATALOG_RELATIONS = 200
FENCE_TAG = "---kg-code---"
UNVERIFIED_NOTICE = "unverified — do not rely on"
TEMPLATE_VERSION = "1"

FINAL_SYSTEM_PROMPT = (
    "Answer using only the question and the grounded reasoning steps provided. "
    "Treat facts listed under verified steps as true. Ignore any step marked unverified."
)


class ChainError(Exception):
    """Base class for chain-engine failures."""


class DecompositionUnparseable(ChainError):
    pass


class NoCodeBlock(ChainError):
    pass


class RepairBudgetExhausted(ChainError):
    pass


class PendingStepPresent(ChainError):
    pass


class EmptyAnswer(ChainError):
    pass


@dataclass(frozen=True)
class SubTask:
    index: int  # 1-based
    goal: str
    expected_form: str = ENTITY_FORM

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("sub-task index is 1-based")
        if not self.goal:
            raise ValueError("sub-task goal must be non-empty")
        if self.expected_form not in FORMS:
            raise ValueError(f"unknown expected form {self.expected_form!r}")


@dataclass(frozen=True)
class ReasoningStep:
    subtask: SubTask
    rationale: str
    code: str
    program: Optional[Program] = None
    evidence: Optional[ResultSet] = None
    verdict: str = PENDING
    repair_count: int = 0
    diagnostics: tuple[Diagnostic, ...] = ()

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.repair_count < 0:
            raise ValueError("repair count cannot be negative")

    @property
    def canonical_code(self) -> str:
        return render(self.program) if self.program is not None else self.code


def chain_status(steps: Sequence[ReasoningStep]) -> str:
    return CLEAN if steps and all(s.verdict == SUPPORTED for s in steps) else DEGRADED


@dataclass(frozen=True)
class Chain:
    question: str
    steps: tuple[ReasoningStep, ...]
    status: str
    final_answers: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status not in (CLEAN, DEGRADED):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status != chain_status(self.steps):
            raise ValueError("status inconsistent with step verdicts")


@dataclass(frozen=True)
class RunOutcome:
    """A finished run plus the intermediate record cmd_ask prints."""

    chain: Chain
    bundle: PromptBundle
    attempts: tuple[tuple[ReasoningStep, ...], ...]  # per final step, verify/repair history
    warnings: tuple[str, ...] = ()


@lru_cache(maxsize=None)
def _template(name: str) -> str:
    return (resources.files("kdchain") / "templates" / name).read_text(encoding="utf-8")


def render_template(name: str, **substitutions: object) -> str:
    text = _template(name)
    for key, value in substitutions.items():
        text = text.replace("{{" + key + "}}", str(value))
    return text


def extract_code(text: str) -> tuple[str, str, tuple[str, ...]]:
    """Split a model reply into (rationale, code, warnings) around the first fence pair."""
    lines = text.splitlines()
    tags = [i for i, line in enumerate(lines) if line.strip() == FENCE_TAG]
    if len(tags) < 2:
        raise NoCodeBlock(f"response contained no {FENCE_TAG} fenced block")
    code = "\n".join(lines[tags[0] + 1 : tags[1]]).strip()
    rationale = "\n".join(lines[: tags[0]]).strip()
    warnings = ("extra code fences ignored",) if len(tags) > 2 else ()
    return rationale, code, warnings


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def nearest_relations(name: str, catalog: Sequence[str], limit: int = 10) -> tuple[str, ...]:
    ranked = sorted(catalog, key=lambda rel: (levenshtein(name, rel), rel))
    return tuple(ranked[:limit])


def _word_bounded(needle: str, haystack: str) -> bool:
    pattern = rf"(?<![a-z0-9_]){re.escape(needle)}(?![a-z0-9_])"
    return re.search(pattern, haystack) is not None


def _anchored_entities(program: Program, graph: Graph) -> set[str]:
    anchored: set[str] = set()
    for stmt in program.statements:
        src = stmt.expr.source
        if isinstance(src, EntityRef):
            anchored.update(graph.resolve_label(src.text))
            if graph.has_entity(src.text):
                anchored.add(src.text)
    return anchored


def _claim_entities(step: ReasoningStep, program: Program, graph: Graph) -> set[str]:
    """Entities asserted by the step's own claim text, minus the ones its code starts from."""
    text = normalize_label(step.rationale or step.subtask.goal)
    found: set[str] = set()
    for label, ids in graph.normalized_labels.items():
        if _word_bounded(label, text):
            found.update(ids)
    for token in set(re.findall(r"[a-z0-9_]+", text)):
        if graph.has_entity(token):
            found.add(token)
    return found - _anchored_entities(program, graph)


def verify_step(step: ReasoningStep, graph: Graph) -> ReasoningStep:
    """Parse, validate, and execute a PENDING step's code; set the verdict.

    All failures become verdicts: broken or ungrounded code is UNVERIFIABLE,
    an empty result is UNVERIFIABLE (the graph may simply not know), and only
    a non-empty result that contradicts the claimed form is REFUTED.
    """
    if step.verdict != PENDING:
        raise ValueError("verify_step expects a PENDING step")
    try:
        program = parse(step.code)
    except ParseError as exc:
        return dataclasses.replace(step, verdict=UNVERIFIABLE, diagnostics=(exc.diagnostic,))
    diagnostics = validate(program, graph)
    if any(d.is_error for d in diagnostics):
        return dataclasses.replace(step, program=program, verdict=UNVERIFIABLE, diagnostics=diagnostics)
    evidence = execute(program, graph)
    base = dataclasses.replace(step, program=program, evidence=evidence, diagnostics=diagnostics)
    if not evidence.values:
        return dataclasses.replace(base, verdict=UNVERIFIABLE)
    form = step.subtask.expected_form
    if form == ENTITY_FORM:
        verdict = SUPPORTED if any(not t.is_literal for t in evidence.values) else REFUTED
    elif form == LITERAL_FORM:
        verdict = SUPPORTED if any(t.is_literal for t in evidence.values) else REFUTED
    else:  # boolean: the claim names an entity; presence in the result decides
        claimed = _claim_entities(step, program, graph)
        if not claimed:
            verdict = UNVERIFIABLE
        else:
            values = {t.value for t in evidence.values}
            verdict = SUPPORTED if claimed & values else REFUTED
    return dataclasses.replace(base, verdict=verdict)


def _evidence_summary(step: ReasoningStep, limit: int = 10) -> str:
    if step.evidence is None:
        return "(unchecked)"
    values = step.evidence.values
    if not values:
        return "(empty)"
    shown = ", ".join(t.value for t in values[:limit])
    if len(values) > limit:
        shown += f" (+{len(values) - limit} more)"
    return shown


def _fact_line(triple) -> str:
    obj = quote(triple.obj.value) if triple.obj.is_literal else triple.obj.value
    return f"{triple.subject} {triple.predicate} {obj}"


def _step_block(step: ReasoningStep) -> str:
    header = f"Step {step.subtask.index}: {step.subtask.goal}"
    if step.verdict != SUPPORTED:
        return f"{header}\n{UNVERIFIED_NOTICE}"
    lines = [header]
    if step.rationale:
        lines.append(step.rationale)
    lines.extend([FENCE_TAG, step.canonical_code, FENCE_TAG])
    lines.append(f"Result: {_evidence_summary(step)}")
    if step.evidence is not None and step.evidence.provenance:
        lines.append("Facts:")
        lines.extend(f"  {_fact_line(t)}" for t in step.evidence.provenance)
    return "\n".join(lines)


def assemble_prompt(chain: Chain, *, params: Optional[DecodeParams] = None) -> PromptBundle:
    """Build the grounded final prompt. Only SUPPORTED steps contribute code fences."""
    if any(s.verdict == PENDING for s in chain.steps):
        raise PendingStepPresent("cannot assemble a prompt while steps are PENDING")
    context = "\n\n".join(_step_block(s) for s in chain.steps) or "(none)"
    user = render_template("final.txt", question=chain.question, context=context)
    return PromptBundle(
        (Message("system", FINAL_SYSTEM_PROMPT), Message("user", user)),
        params or DecodeParams(),
    )


def split_answers(candidates: Sequence[str]) -> list[str]:
    """Candidate texts to a flat ranked list: first candidate's lines lead."""
    out: list[str] = []
    for candidate in candidates:
        out.extend(line.strip() for line in candidate.splitlines() if line.strip())
    return out


def rank_answers(candidates: Sequence[str], limit: int = MAX_ANSWERS) -> tuple[str, ...]:
    """Normalize, deduplicate keeping best rank, truncate."""
    seen: set[str] = set()
    ranked: list[str] = []
    for line in split_answers(candidates):
        norm = normalize_answer(line, TEXT)
        if norm and norm not in seen:
            seen.add(norm)
            ranked.append(norm)
        if len(ranked) == limit:
            break
    return tuple(ranked)


def _parse_subtasks(text: str) -> list[SubTask]:
    raw = text.strip()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError:
        start, end = raw.find("["), raw.rfind("]")
        if start == -1 or end <= start:
            raise ValueError("no JSON array found in the reply")
        try:
            data = json.loads(raw[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ValueError(f"JSON array does not parse: {exc}")
    if not isinstance(data, list) or not data:
        raise ValueError("expected a non-empty JSON array")
    subtasks: list[SubTask] = []
    for i, item in enumerate(data, start=1):
        if not isinstance(item, dict):
            raise ValueError(f"element {i} is not an object")
        goal = item.get("goal")
        if not isinstance(goal, str) or not goal.strip():
            raise ValueError(f"element {i} lacks a non-empty 'goal'")
        form = item.get("expected_form", ENTITY_FORM)
        if form not in FORMS:
            raise ValueError(f"element {i} has unknown expected_form {form!r}")
        subtasks.append(SubTask(i, goal.strip(), form))
    return subtasks


class ChainRunner:
    """Drives one question through decompose / generate / verify / repair / finalize.

    verification=False is the ablation baseline: every step is accepted as-is
    (forced SUPPORTED, no repairs), so fabricated relations flow unchecked
    into the final prompt.
    """

    def __init__(
        self,
        graph: Graph,
        provider: Provider,
        *,
        verification: bool = True,
        repair_budget: int = REPAIR_BUDGET,
        params: Optional[DecodeParams] = None,
        transcript: Optional[Transcript] = None,
        retry: Optional[RetryPolicy] = None,
    ):
        if repair_budget < 0:
            raise ValueError("repair budget cannot be negative")
        self.graph = graph
        self.provider = provider
        self.verification = verification
        self.repair_budget = repair_budget
        self.params = params or DecodeParams()
        self.transcript = transcript
        self.retry = retry

    # -- gateway plumbing ---------------------------------------------------

    def _complete(self, messages: tuple[Message, ...]) -> Completion:
        bundle = PromptBundle(messages, self.params)
        return complete(
            bundle,
            self.provider,
            transcript=self.transcript,
            retry=self.retry,
            meta={"template_version": TEMPLATE_VERSION},
        )

    # -- pipeline stages ----------------------------------------------------

    def decompose(self, question: str, warnings: Optional[list[str]] = None) -> list[SubTask]:
        if not question.strip():
            raise ValueError("question must be non-empty")
        base = render_template("decompose.txt", question=question)
        prompt = base
        last_error = "no attempts made"
        for _ in range(1 + self.repair_budget):
            completion = self._complete((Message("user", prompt),))
            try:
                subtasks = _parse_subtasks(completion.candidates[0])
            except ValueError as exc:
                last_error = str(exc)
                prompt = (
                    base
                    + f"\n\nYour previous reply could not be used: {last_error}\n"
                    + "Reply with only the JSON array."
                )
                continue
            if len(subtasks) > MAX_SUBTASKS:
                if warnings is not None:
                    warnings.append(
                        f"decomposition produced {len(subtasks)} sub-tasks; keeping the first {MAX_SUBTASKS}"
                    )
                subtasks = subtasks[:MAX_SUBTASKS]
            return subtasks
        raise DecompositionUnparseable(last_error)

    def _step_context(self, prior: Sequence[ReasoningStep]) -> str:
        supported = [s for s in prior if s.verdict == SUPPORTED]
        if not supported:
            return "none yet"
        blocks = []
        for step in supported:
            blocks.append(
                f"Step {step.subtask.index} goal: {step.subtask.goal}\n"
                f"code:\n{step.canonical_code}\n"
                f"result: {_evidence_summary(step)}"
            )
        return "\n\n".join(blocks)

    def _step_prompt(self, subtask: SubTask, prior: Sequence[ReasoningStep]) -> str:
        catalog = self.graph.relation_catalog[:MAX_CATALOG_RELATIONS]
        return render_template(
            "step.txt",
            reference=LANGUAGE_REFERENCE,
            relation_count=len(catalog),
            relations=", ".join(catalog) or "(none)",
            context=self._step_context(prior),
            goal=subtask.goal,
            expected_form=subtask.expected_form,
        )

    def generate_step(
        self,
        subtask: SubTask,
        prior: Sequence[ReasoningStep] = (),
        warnings: Optional[list[str]] = None,
    ) -> ReasoningStep:
        completion = self._complete((Message("user", self._step_prompt(subtask, prior)),))
        rationale, code, warns = extract_code(completion.candidates[0])
        if warnings is not None:
            warnings.extend(warns)
        return ReasoningStep(subtask, rationale, code)

    def repair_step(
        self,
        step: ReasoningStep,
        prior: Sequence[ReasoningStep] = (),
        warnings: Optional[list[str]] = None,
    ) -> ReasoningStep:
        if step.verdict not in (REFUTED, UNVERIFIABLE):
            raise ValueError("only REFUTED or UNVERIFIABLE steps can be repaired")
        if step.repair_count >= self.repair_budget:
            raise RepairBudgetExhausted(
                f"step already used its {self.repair_budget} repair attempts"
            )
        problems = [d.message for d in step.diagnostics]
        if not problems:
            if step.evidence is not None and step.evidence.values:
                problems = [f"the result ({_evidence_summary(step)}) does not support the claim"]
            else:
                problems = ["the code ran but returned an empty result"]
        sections = [
            self._step_prompt(step.subtask, prior),
            "Your previous code failed verification.",
            "Failed code:\n" + "\n".join("    " + line for line in (step.code or "(no code)").splitlines()),
            "Problems:\n" + "\n".join(f"- {p}" for p in problems),
        ]
        suggestions = self._relation_suggestions(step)
        if suggestions:
            sections.append(suggestions)
        sections.append(
            "Rewrite the code to fix these problems. Reply in the same format: "
            f"a short plan, then one {FENCE_TAG} fenced block."
        )
        completion = self._complete((Message("user", "\n\n".join(sections)),))
        rationale, code, warns = extract_code(completion.candidates[0])
        if warnings is not None:
            warnings.extend(warns)
        return ReasoningStep(step.subtask, rationale, code, repair_count=step.repair_count + 1)

    def _relation_suggestions(self, step: ReasoningStep) -> str:
        if step.program is None:
            return ""
        catalog = self.graph.relation_catalog
        lines = []
        seen: set[str] = set()
        for stmt in step.program.statements:
            for s in stmt.expr.steps:
                if isinstance(s, (OutStep, InStep)) and not self.graph.has_relation(s.relation):
                    if s.relation not in seen:
                        seen.add(s.relation)
                        near = ", ".join(nearest_relations(s.relation, catalog))
                        lines.append(f"Closest relations to '{s.relation}': {near}")
        return "\n".join(lines)

    def _accept_unchecked(self, step: ReasoningStep) -> ReasoningStep:
        # Ablation path: no gate, but still attach whatever evidence the code yields.
        program = None
        evidence = None
        diagnostics: tuple[Diagnostic, ...] = ()
        try:
            program = parse(step.code)
            diagnostics = validate(program, self.graph)
            if not any(d.is_error for d in diagnostics):
                evidence = execute(program, self.graph)
        except (ParseError, ExecutionPreconditionViolated):
            pass
        return dataclasses.replace(
            step, program=program, evidence=evidence, diagnostics=diagnostics, verdict=SUPPORTED
        )

    def _failed_generation(self, subtask: SubTask, error: ChainError, repair_count: int = 0) -> ReasoningStep:
        diagnostic = Diagnostic(ERROR, SYNTAX, (0, 0), str(error))
        return ReasoningStep(
            subtask, "", "", verdict=UNVERIFIABLE, repair_count=repair_count, diagnostics=(diagnostic,)
        )

    def _resolve_step(
        self,
        subtask: SubTask,
        prior: Sequence[ReasoningStep],
        warnings: list[str],
    ) -> tuple[ReasoningStep, tuple[ReasoningStep, ...]]:
        try:
            step = self.generate_step(subtask, prior, warnings)
        except NoCodeBlock as exc:
            step = self._failed_generation(subtask, exc)
        else:
            step = verify_step(step, self.graph) if self.verification else self._accept_unchecked(step)
        history = [step]
        while (
            self.verification
            and step.verdict in (REFUTED, UNVERIFIABLE)
            and step.repair_count < self.repair_budget
        ):
            try:
                candidate = self.repair_step(step, prior, warnings)
            except NoCodeBlock as exc:
                step = self._failed_generation(subtask, exc, repair_count=step.repair_count + 1)
            else:
                step = verify_step(candidate, self.graph)
            history.append(step)
        return step, tuple(history)

    def finalize(self, chain: Chain, bundle: Optional[PromptBundle] = None) -> Chain:
        if bundle is None:
            bundle = assemble_prompt(chain, params=self.params)
        completion = self._complete(bundle.messages)
        answers = rank_answers(completion.candidates)
        if not answers:
            raise EmptyAnswer("the provider produced no usable answer lines")
        return dataclasses.replace(chain, final_answers=answers)

    def run(self, question: str) -> RunOutcome:
        warnings: list[str] = []
        subtasks = self.decompose(question, warnings)
        steps: list[ReasoningStep] = []
        attempts: list[tuple[ReasoningStep, ...]] = []
        for subtask in subtasks:
            step, history = self._resolve_step(subtask, steps, warnings)
            steps.append(step)
            attempts.append(history)
        chain = Chain(question, tuple(steps), chain_status(steps))
        bundle = assemble_prompt(chain, params=self.params)
        chain = self.finalize(chain, bundle)
        return RunOutcome(chain, bundle, tuple(attempts), tuple(warnings))
