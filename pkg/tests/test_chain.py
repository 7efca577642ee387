import json

import pytest

from kdchain.chain import (
    CLEAN,
    DEGRADED,
    FENCE_TAG,
    FINAL_SYSTEM_PROMPT,
    MAX_SUBTASKS,
    REFUTED,
    SUPPORTED,
    UNVERIFIABLE,
    UNVERIFIED_NOTICE,
    Chain,
    ChainRunner,
    DecompositionUnparseable,
    EmptyAnswer,
    NoCodeBlock,
    PendingStepPresent,
    ReasoningStep,
    RepairBudgetExhausted,
    SubTask,
    assemble_prompt,
    chain_status,
    extract_code,
    levenshtein,
    nearest_relations,
    rank_answers,
    render_template,
    split_answers,
    verify_step,
)
from kdchain.gateway import Completion

GOOD_CAPITAL = 'return entity("France").in(capital_of);'


class QueueProvider:
    """Replies in order no matter the prompt; records every prompt it saw."""

    provider_id = "queue"

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts: list[str] = []

    def send(self, bundle):
        self.prompts.append(bundle.messages[-1].content)
        if not self.replies:
            raise AssertionError("test script ran out of replies")
        return Completion((self.replies.pop(0),), self.provider_id, 0.0)


def fenced(rationale: str, code: str) -> str:
    return f"{rationale}\n{FENCE_TAG}\n{code}\n{FENCE_TAG}"


def decomposition(*goals, form="entity") -> str:
    return json.dumps([{"goal": g, "expected_form": form} for g in goals])


def pending(goal: str, code: str, form: str = "entity", rationale: str = "") -> ReasoningStep:
    return ReasoningStep(SubTask(1, goal, form), rationale, code)


# -- templates and reply splitting -------------------------------------------


def test_render_template_substitutes():
    text = render_template("decompose.txt", question="Who?")
    assert "Question: Who?" in text
    assert "{{" not in text


def test_extract_code_happy_path():
    rationale, code, warnings = extract_code(
        f"First I look upstream.\n{FENCE_TAG}\n{GOOD_CAPITAL}\n{FENCE_TAG}\n"
    )
    assert rationale == "First I look upstream."
    assert code == GOOD_CAPITAL
    assert warnings == ()


def test_extract_code_requires_fence_pair():
    with pytest.raises(NoCodeBlock):
        extract_code("no code here")
    with pytest.raises(NoCodeBlock):
        extract_code(f"{FENCE_TAG}\nunclosed")


def test_extract_code_keeps_first_block_and_warns():
    text = "\n".join(
        ["plan", FENCE_TAG, "first;", FENCE_TAG, "chatter", FENCE_TAG, "second;", FENCE_TAG]
    )
    rationale, code, warnings = extract_code(text)
    assert code == "first;"
    assert rationale == "plan"
    assert warnings == ("extra code fences ignored",)


def test_extract_code_ignores_indented_tag_lines():
    # The fence must be the whole line, but surrounding spaces are tolerated.
    text = f"plan\n  {FENCE_TAG}  \n{GOOD_CAPITAL}\n{FENCE_TAG}"
    _, code, _ = extract_code(text)
    assert code == GOOD_CAPITAL


# -- edit distance and relation suggestions -----------------------------------


def test_levenshtein():
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("", "abc") == 3
    assert levenshtein("same", "same") == 0
    assert levenshtein("ab", "ba") == 2


def test_nearest_relations_ranks_and_breaks_ties_lexically():
    catalog = ["capital_of", "located_in", "has_capital", "currency"]
    assert nearest_relations("capital_off", catalog)[0] == "capital_of"
    assert nearest_relations("aa", ["ab", "ba"]) == ("ab", "ba")
    assert len(nearest_relations("x", [f"r{i}" for i in range(30)])) == 10


# -- step verification ---------------------------------------------------------


def test_verify_entity_form(toy_graph):
    step = verify_step(pending("Find the capital of France", GOOD_CAPITAL), toy_graph)
    assert step.verdict == SUPPORTED
    assert [t.value for t in step.evidence.values] == ["paris"]
    assert step.evidence.provenance  # the touched triple rides along


def test_verify_entity_form_refuted_by_literals(toy_graph):
    step = verify_step(
        pending("Find the capital of France", 'return entity("France").out(population);'),
        toy_graph,
    )
    assert step.verdict == REFUTED


def test_verify_literal_form(toy_graph):
    supported = verify_step(
        pending("Population of France", 'return entity("France").out(population);', "literal"),
        toy_graph,
    )
    refuted = verify_step(
        pending("Population of France", GOOD_CAPITAL, "literal"), toy_graph
    )
    assert supported.verdict == SUPPORTED
    assert refuted.verdict == REFUTED


def test_verify_empty_result_is_unverifiable(toy_graph):
    step = verify_step(
        pending("Cities in the Netherlands", 'return entity("Holland").in(located_in);'),
        toy_graph,
    )
    assert step.verdict == UNVERIFIABLE
    assert step.evidence is not None and not step.evidence.values


def test_verify_parse_error_is_unverifiable(toy_graph):
    step = verify_step(pending("Anything", "return ;"), toy_graph)
    assert step.verdict == UNVERIFIABLE
    assert step.diagnostics and step.diagnostics[0].code == "SYNTAX"
    assert step.program is None


def test_verify_unknown_relation_is_unverifiable(toy_graph):
    step = verify_step(
        pending("Capital of France", 'return entity("France").out(ruled_by);'), toy_graph
    )
    assert step.verdict == UNVERIFIABLE
    assert any("ruled_by" in d.message for d in step.diagnostics)
    assert step.program is not None  # parsed fine, failed validation


def test_verify_boolean_claim_supported(toy_graph):
    step = verify_step(
        pending(
            "Check whether Paris is the capital of France",
            GOOD_CAPITAL,
            "boolean",
            rationale="Paris is the capital of France.",
        ),
        toy_graph,
    )
    assert step.verdict == SUPPORTED


def test_verify_boolean_claim_refuted(toy_graph):
    """A false claim over a non-empty result is contradicted, not unverifiable."""
    step = verify_step(
        pending(
            "Check whether Lyon is the capital of France",
            GOOD_CAPITAL,
            "boolean",
            rationale="Lyon is the capital of France.",
        ),
        toy_graph,
    )
    assert step.verdict == REFUTED


def test_verify_boolean_without_claim_entities(toy_graph):
    step = verify_step(
        pending("Decide it", GOOD_CAPITAL, "boolean", rationale="The answer is obvious."),
        toy_graph,
    )
    assert step.verdict == UNVERIFIABLE


def test_verify_boolean_falls_back_to_goal(toy_graph):
    step = verify_step(
        pending("Check whether Paris is the capital of France", GOOD_CAPITAL, "boolean"),
        toy_graph,
    )
    assert step.verdict == SUPPORTED


def test_verify_requires_pending(toy_graph):
    done = verify_step(pending("x", GOOD_CAPITAL), toy_graph)
    with pytest.raises(ValueError):
        verify_step(done, toy_graph)


def test_subtask_and_step_invariants():
    with pytest.raises(ValueError):
        SubTask(0, "goal")
    with pytest.raises(ValueError):
        SubTask(1, "")
    with pytest.raises(ValueError):
        SubTask(1, "goal", "number")
    with pytest.raises(ValueError):
        ReasoningStep(SubTask(1, "g"), "", "", verdict="MAYBE")
    with pytest.raises(ValueError):
        ReasoningStep(SubTask(1, "g"), "", "", repair_count=-1)


def test_chain_status_and_consistency(toy_graph):
    good = verify_step(pending("x", GOOD_CAPITAL), toy_graph)
    bad = verify_step(pending("y", "return ;"), toy_graph)
    assert chain_status([good]) == CLEAN
    assert chain_status([good, bad]) == DEGRADED
    assert chain_status([]) == DEGRADED
    with pytest.raises(ValueError):
        Chain("q", (good,), DEGRADED)
    with pytest.raises(ValueError):
        Chain("q", (good, bad), CLEAN)


# -- prompt assembly ------------------------------------------------------------


def test_assemble_rejects_pending_steps(toy_graph):
    chain = Chain("q", (pending("x", GOOD_CAPITAL),), DEGRADED)
    with pytest.raises(PendingStepPresent):
        assemble_prompt(chain)


def test_assemble_supported_steps_carry_code_and_facts(toy_graph):
    step = verify_step(pending("Find the capital of France", GOOD_CAPITAL), toy_graph)
    chain = Chain("What is the capital of France?", (step,), CLEAN)
    bundle = assemble_prompt(chain)
    assert bundle.messages[0].role == "system"
    assert bundle.messages[0].content == FINAL_SYSTEM_PROMPT
    user = bundle.messages[1].content
    assert user.count(FENCE_TAG) == 2
    assert GOOD_CAPITAL in user
    assert "Result: paris" in user
    assert "paris capital_of france" in user
    assert UNVERIFIED_NOTICE not in user


def test_assemble_marks_failed_steps_without_code(toy_graph):
    good = verify_step(pending("Find the capital of France", GOOD_CAPITAL), toy_graph)
    bad = verify_step(
        ReasoningStep(SubTask(2, "Find the ruler"), "", 'return entity("France").out(ruled_by);'),
        toy_graph,
    )
    chain = Chain("q", (good, bad), DEGRADED)
    user = assemble_prompt(chain).messages[1].content
    # only the supported step contributes a fence pair
    assert user.count(FENCE_TAG) == 2
    assert user.count(UNVERIFIED_NOTICE) == 1
    assert "ruled_by" not in user


def test_assemble_is_deterministic(toy_graph):
    step = verify_step(pending("Find the capital of France", GOOD_CAPITAL), toy_graph)
    chain = Chain("q", (step,), CLEAN)
    assert assemble_prompt(chain) == assemble_prompt(chain)


def test_assemble_empty_chain_says_none():
    chain = Chain("q", (), DEGRADED)
    assert "(none)" in assemble_prompt(chain).messages[1].content


def test_literal_facts_are_quoted(toy_graph):
    step = verify_step(
        pending("Currency of France", 'return entity("France").out(currency);', "literal"),
        toy_graph,
    )
    user = assemble_prompt(Chain("q", (step,), CLEAN)).messages[1].content
    assert 'france currency "Euro"' in user


# -- answer post-processing ------------------------------------------------------


def test_split_answers_flattens_candidates():
    assert split_answers(["a\nb\n\n", "c"]) == ["a", "b", "c"]


def test_rank_answers_normalizes_dedups_truncates():
    ranked = rank_answers(["Paris\nThe Paris\nLYON", "paris.\nBerlin"])
    assert ranked == ("paris", "lyon", "berlin")
    assert rank_answers([f"a{i}" for i in range(9)]) == ("a0", "a1", "a2", "a3", "a4")
    assert rank_answers(["..."]) == ()


# -- the runner, stage by stage ---------------------------------------------------


def run_one(toy_graph, replies, **kwargs):
    provider = QueueProvider(replies)
    runner = ChainRunner(toy_graph, provider, **kwargs)
    outcome = runner.run("What is the capital of France?")
    return outcome, provider


def test_run_happy_path(toy_graph):
    outcome, provider = run_one(
        toy_graph,
        [
            decomposition("Find the capital of France"),
            fenced("Follow capital_of backwards.", GOOD_CAPITAL),
            "Paris",
        ],
    )
    assert outcome.chain.status == CLEAN
    assert outcome.chain.final_answers == ("paris",)
    assert len(provider.prompts) == 3
    assert outcome.attempts == ((outcome.chain.steps[0],),)
    assert outcome.warnings == ()


def test_decompose_reasks_after_prose(toy_graph):
    outcome, provider = run_one(
        toy_graph,
        [
            "Sure thing! Here is my plan, in plain words.",
            decomposition("Find the capital of France"),
            fenced("ok", GOOD_CAPITAL),
            "Paris",
        ],
    )
    assert outcome.chain.status == CLEAN
    assert "Your previous reply could not be used" in provider.prompts[1]
    assert "Reply with only the JSON array." in provider.prompts[1]


def test_decompose_accepts_json_wrapped_in_prose(toy_graph):
    reply = "Here you go:\n" + decomposition("Find the capital of France") + "\nhope that helps"
    outcome, _ = run_one(toy_graph, [reply, fenced("ok", GOOD_CAPITAL), "Paris"])
    assert outcome.chain.status == CLEAN


def test_decompose_gives_up_after_budget(toy_graph):
    provider = QueueProvider(["prose", "more prose", "still prose"])
    runner = ChainRunner(toy_graph, provider)
    with pytest.raises(DecompositionUnparseable):
        runner.run("What is the capital of France?")
    assert len(provider.prompts) == 3  # 1 + repair budget


def test_decompose_truncates_oversized_plans(toy_graph):
    goals = [f"Goal number {i}" for i in range(10)]
    replies = [decomposition(*goals)]
    replies += [fenced("ok", GOOD_CAPITAL)] * MAX_SUBTASKS
    replies += ["Paris"]
    outcome, provider = run_one(toy_graph, replies)
    assert len(outcome.chain.steps) == MAX_SUBTASKS
    assert any("keeping the first 8" in w for w in outcome.warnings)
    assert len(provider.prompts) == 1 + MAX_SUBTASKS + 1


def test_repair_flips_unverifiable_step(toy_graph):
    outcome, provider = run_one(
        toy_graph,
        [
            decomposition("Find the capital of France"),
            fenced("Countries point at capitals.", 'return entity("France").out(has_capital);'),
            fenced("The edge direction was wrong.", GOOD_CAPITAL),
            "Paris",
        ],
    )
    first, second = outcome.attempts[0]
    assert (first.verdict, second.verdict) == (UNVERIFIABLE, SUPPORTED)
    assert second.repair_count == 1
    assert outcome.chain.status == CLEAN

    repair_prompt = provider.prompts[2]
    assert "Your previous code failed verification." in repair_prompt
    assert '    return entity("France").out(has_capital);' in repair_prompt
    assert "Problems:" in repair_prompt
    assert "Closest relations to 'has_capital':" in repair_prompt
    # suggestions come from the real catalog
    assert "capital_of" in repair_prompt


def test_repair_budget_exhaustion_degrades(toy_graph):
    outcome, provider = run_one(
        toy_graph,
        [
            decomposition("Find the capital of France"),
            fenced("try one", 'return entity("France").out(has_capital);'),
            fenced("try two", 'return entity("France").out(capital);'),
            fenced("try three", 'return entity("France").out(main_city);'),
            "Paris",
        ],
    )
    assert outcome.chain.status == DEGRADED
    final = outcome.chain.steps[0]
    assert final.verdict == UNVERIFIABLE
    assert final.repair_count == 2
    assert len(outcome.attempts[0]) == 3
    assert len(provider.prompts) == 5  # decompose + 3 step attempts + final
    assert UNVERIFIED_NOTICE in provider.prompts[-1]


def test_refuted_boolean_repair(toy_graph):
    replies = [
        json.dumps([{"goal": "Check whether Lyon is the capital of France", "expected_form": "boolean"}]),
        fenced("Lyon is the capital of France.", GOOD_CAPITAL),
        fenced("Paris is the capital of France, so Lyon is not.", 'let c = entity("France").in(capital_of);\nreturn c;'),
        "No",
    ]
    provider = QueueProvider(replies)
    runner = ChainRunner(toy_graph, provider)
    outcome = runner.run("Is Lyon the capital of France?")
    first, second = outcome.attempts[0]
    assert first.verdict == REFUTED
    assert second.verdict == SUPPORTED
    assert outcome.chain.final_answers == ("no",)
    # a refuted step reports its contradicting result, not a diagnostic
    assert "the result (paris) does not support the claim" in provider.prompts[2]


def test_empty_result_repair_problem_text(toy_graph):
    outcome, provider = run_one(
        toy_graph,
        [
            decomposition("Find cities in the Netherlands"),
            fenced("look", 'return entity("Holland").in(located_in);'),
            fenced("look again", 'return entity("Holland").in(capital_of);'),
            "Amsterdam",
        ],
    )
    assert "the code ran but returned an empty result" in provider.prompts[2]
    assert outcome.chain.status == CLEAN


def test_missing_fence_consumes_repair_attempt(toy_graph):
    outcome, provider = run_one(
        toy_graph,
        [
            decomposition("Find the capital of France"),
            "I would use the capital_of relation but here is no code.",
            fenced("with code now", GOOD_CAPITAL),
            "Paris",
        ],
    )
    first, second = outcome.attempts[0]
    assert first.verdict == UNVERIFIABLE
    assert first.code == ""
    assert second.verdict == SUPPORTED
    assert "(no code)" in provider.prompts[2]
    assert outcome.chain.status == CLEAN


def test_plain_mode_accepts_fabrications(toy_graph):
    fabricated = 'return entity("France").out(ruled_by);'
    outcome, provider = run_one(
        toy_graph,
        [
            decomposition("Find the ruler of France"),
            fenced("France has a ruled_by edge.", fabricated),
            "King Louis",
        ],
        verification=False,
    )
    step = outcome.chain.steps[0]
    assert step.verdict == SUPPORTED
    assert step.evidence is None
    assert outcome.chain.status == CLEAN
    assert len(provider.prompts) == 3  # no repair traffic in the ablation
    assert fabricated in provider.prompts[-1]  # flows into the final prompt unchecked


def test_call_count_never_exceeds_budget_bound(toy_graph):
    # Worst case for one sub-task: every decompose and repair attempt burned.
    replies = [
        "prose",
        "more prose",
        decomposition("Find the capital of France"),
        fenced("a", 'return entity("France").out(has_capital);'),
        fenced("b", 'return entity("France").out(capital);'),
        fenced("c", 'return entity("France").out(main_city);'),
        "Paris",
    ]
    provider = QueueProvider(replies)
    runner = ChainRunner(toy_graph, provider)
    outcome = runner.run("What is the capital of France?")
    steps = len(outcome.chain.steps)
    budget = runner.repair_budget
    bound = (1 + budget) + steps * (1 + budget) + 1
    assert len(provider.prompts) == bound == 7


def test_finalize_rejects_unusable_answers(toy_graph):
    provider = QueueProvider(
        [decomposition("Find the capital of France"), fenced("ok", GOOD_CAPITAL), "..."]
    )
    runner = ChainRunner(toy_graph, provider)
    with pytest.raises(EmptyAnswer):
        runner.run("What is the capital of France?")


def test_repair_step_preconditions(toy_graph):
    provider = QueueProvider([])
    runner = ChainRunner(toy_graph, provider)
    good = verify_step(pending("x", GOOD_CAPITAL), toy_graph)
    with pytest.raises(ValueError):
        runner.repair_step(good)
    exhausted = verify_step(
        ReasoningStep(SubTask(1, "x"), "", "return ;", repair_count=2), toy_graph
    )
    with pytest.raises(RepairBudgetExhausted):
        runner.repair_step(exhausted)


def test_runner_rejects_negative_budget(toy_graph):
    with pytest.raises(ValueError):
        ChainRunner(toy_graph, QueueProvider([]), repair_budget=-1)


def test_extra_fences_warning_surfaces_in_outcome(toy_graph):
    noisy = "\n".join(
        ["plan", FENCE_TAG, GOOD_CAPITAL, FENCE_TAG, "and also", FENCE_TAG, "return x;", FENCE_TAG]
    )
    outcome, _ = run_one(
        toy_graph,
        [decomposition("Find the capital of France"), noisy, "Paris"],
    )
    assert "extra code fences ignored" in outcome.warnings
    assert outcome.chain.status == CLEAN


def test_decompose_rejects_blank_question(toy_graph):
    runner = ChainRunner(toy_graph, QueueProvider([]))
    with pytest.raises(ValueError):
        runner.decompose("   ")


def test_decompose_rejects_bad_expected_form(toy_graph):
    provider = QueueProvider(
        [
            json.dumps([{"goal": "g", "expected_form": "integer"}]),
            decomposition("Find the capital of France"),
            fenced("ok", GOOD_CAPITAL),
            "Paris",
        ]
    )
    runner = ChainRunner(toy_graph, provider)
    outcome = runner.run("What is the capital of France?")
    assert outcome.chain.status == CLEAN
    assert "unknown expected_form" in provider.prompts[1]
