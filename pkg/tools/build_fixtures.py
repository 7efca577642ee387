#!/usr/bin/env python3
"""Regenerate the packaged demo fixtures in src/kdchain/fixtures/.

Produces three files:

  graph.tsv    a small geography knowledge graph (~280 triples)
  corpus.jsonl forty questions over that graph, gold answers included
  scripts.json a scripted-provider file covering every prompt the pipeline
               issues for the corpus, keyed by prompt fingerprint

The scripted replies are not written by hand. This tool runs the real
pipeline (decompose, generate, verify, repair, finalize) against an
authoring provider that composes a plausible model reply for each prompt
it receives, following a per-question plan: which sub-tasks to emit, which
code attempt to give on the first try and after each repair request, and
what the final answer looks like when the grounded context is sound versus
when it carries fabricated content. Because replies are pure functions of
the prompt text, the recorded fingerprint-keyed script replays the exact
same behaviour later, including for the rule-based question perturbations.

Seeded failure modes:
  - 11 questions whose first code attempt is broken (unknown relation,
    unknown entity, wrong direction, parse error, over-tight filter) and
    repairable within budget
  - 1 boolean question whose first attempt is REFUTED by the graph and
    repaired into a supported negative
  - 2 questions the graph cannot answer at all (every attempt fails, the
    chain ends DEGRADED and the final answer stays ungrounded)

Run from the repository root:  python3 tools/build_fixtures.py
"""
from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from kdchain.chain import FENCE_TAG, UNVERIFIED_NOTICE
from kdchain.evaluation import (
    PERTURB_KINDS,
    EvalItem,
    hit_at_k,
    perturb,
    run_method,
)
from kdchain.gateway import Completion, PromptBundle, prompt_fingerprint
from kdchain.kgstore import load_graph
from kdchain.normalize import TEXT, normalize_answer

FIXTURES = Path(__file__).resolve().parent.parent / "src" / "kdchain" / "fixtures"

# --------------------------------------------------------------------------
# World data
# --------------------------------------------------------------------------

# id, display labels, capital, currency, languages, population, area
COUNTRIES = [
    ("france", ["France"], "paris", "Euro", ["French"], 68000000, "543.9"),
    ("germany", ["Germany", "Deutschland"], "berlin", "Euro", ["German"], 83000000, "357.6"),
    ("netherlands", ["Netherlands", "Holland"], "amsterdam", "Euro", ["Dutch"], 17500000, "41.5"),
    ("belgium", ["Belgium"], "brussels", "Euro", ["Dutch", "French"], 11600000, "30.7"),
    ("spain", ["Spain"], "madrid", "Euro", ["Spanish"], 47400000, "505.9"),
    ("portugal", ["Portugal"], "lisbon", "Euro", ["Portuguese"], 10300000, "92.2"),
    ("italy", ["Italy"], "rome", "Euro", ["Italian"], 59000000, "301.3"),
    ("austria", ["Austria"], "vienna", "Euro", ["German"], 8900000, "83.9"),
    ("switzerland", ["Switzerland"], "bern", "Swiss franc", ["German", "French", "Italian"], 8700000, "41.3"),
    ("poland", ["Poland"], "warsaw", "Zloty", ["Polish"], 38000000, "312.7"),
    ("denmark", ["Denmark"], "copenhagen", "Danish krone", ["Danish"], 5900000, "43.1"),
    ("norway", ["Norway"], "oslo", "Norwegian krone", ["Norwegian"], 5400000, "385.2"),
    ("sweden", ["Sweden"], "stockholm", "Swedish krona", ["Swedish"], 10400000, "450.3"),
    ("ivory_coast", ["Ivory Coast", "Côte d'Ivoire"], "yamoussoukro", "West African CFA franc", ["French"], 28000000, "322.5"),
    ("japan", ["Japan"], "tokyo", "Yen", ["Japanese"], 125000000, "377.9"),
    ("brazil", ["Brazil"], "brasilia", "Real", ["Portuguese"], 214000000, "8515.8"),
]

BORDER_PAIRS = [
    ("france", "belgium"), ("france", "germany"), ("france", "italy"),
    ("france", "spain"), ("france", "switzerland"),
    ("germany", "netherlands"), ("germany", "belgium"), ("germany", "poland"),
    ("germany", "austria"), ("germany", "switzerland"), ("germany", "denmark"),
    ("netherlands", "belgium"),
    ("spain", "portugal"),
    ("italy", "austria"), ("italy", "switzerland"),
    ("austria", "switzerland"),
    ("norway", "sweden"),
]

# id, label, country, population
CITIES = [
    ("paris", "Paris", "france", 2100000),
    ("berlin", "Berlin", "germany", 3700000),
    ("amsterdam", "Amsterdam", "netherlands", 870000),
    ("brussels", "Brussels", "belgium", 1200000),
    ("madrid", "Madrid", "spain", 3300000),
    ("lisbon", "Lisbon", "portugal", 545000),
    ("rome", "Rome", "italy", 2800000),
    ("vienna", "Vienna", "austria", 1900000),
    ("bern", "Bern", "switzerland", 134000),
    ("warsaw", "Warsaw", "poland", 1800000),
    ("copenhagen", "Copenhagen", "denmark", 640000),
    ("oslo", "Oslo", "norway", 700000),
    ("stockholm", "Stockholm", "sweden", 980000),
    ("yamoussoukro", "Yamoussoukro", "ivory_coast", 360000),
    ("tokyo", "Tokyo", "japan", 14000000),
    ("brasilia", "Brasilia", "brazil", 3100000),
    ("lyon", "Lyon", "france", 520000),
    ("marseille", "Marseille", "france", 870000),
    ("munich", "Munich", "germany", 1500000),
    ("hamburg", "Hamburg", "germany", 1900000),
    ("rotterdam", "Rotterdam", "netherlands", 650000),
    ("antwerp", "Antwerp", "belgium", 530000),
    ("barcelona", "Barcelona", "spain", 1600000),
    ("seville", "Seville", "spain", 690000),
    ("porto", "Porto", "portugal", 230000),
    ("milan", "Milan", "italy", 1400000),
    ("naples", "Naples", "italy", 930000),
    ("salzburg", "Salzburg", "austria", 155000),
    ("geneva", "Geneva", "switzerland", 200000),
    ("krakow", "Krakow", "poland", 780000),
    ("osaka", "Osaka", "japan", 2750000),
    ("sao_paulo", "São Paulo", "brazil", 12300000),
]

CAPITALS = {c[2]: True for c in COUNTRIES}

RIVERS = [
    ("rhine", "Rhine", ["switzerland", "germany", "netherlands"]),
    ("seine", "Seine", ["france"]),
    ("danube", "Danube", ["germany", "austria"]),
    ("rhone", "Rhone", ["switzerland", "france"]),
    ("tagus", "Tagus", ["spain", "portugal"]),
    ("po", "Po", ["italy"]),
    ("vistula", "Vistula", ["poland"]),
    ("loire", "Loire", ["france"]),
]

# id, name, leads country, born in city
PEOPLE = [
    ("p_fontaine", "Claire Fontaine", "france", "lyon"),
    ("p_weber", "Anton Weber", "germany", "munich"),
    ("p_devries", "Johan de Vries", "netherlands", "rotterdam"),
    ("p_peeters", "Els Peeters", "belgium", "antwerp"),
    ("p_serrano", "Lucia Serrano", "spain", "barcelona"),
    ("p_rossi", "Marco Rossi", "italy", "naples"),
    ("p_gruber", "Eva Gruber", "austria", "salzburg"),
    ("p_dahl", "Ingrid Dahl", "norway", "oslo"),
    ("p_kowalski", "Piotr Kowalski", "poland", "krakow"),
    ("p_tanaka", "Yuki Tanaka", "japan", "osaka"),
]


def emit_graph() -> str:
    lines = ["# Synthetic geography facts. Tab-separated: subject, predicate, object."]
    lines.append("# Quoted objects are literals; label rows also bind display names.")
    lines.append("")
    lines.append("# countries")
    for cid, labels, capital, currency, languages, population, area in COUNTRIES:
        for label in labels:
            lines.append(f'{cid}\tlabel\t"{label}"')
        lines.append(f'{capital}\tcapital_of\t{cid}')
        lines.append(f'{cid}\tcurrency\t"{currency}"')
        for lang in languages:
            lines.append(f'{cid}\tofficial_language\t"{lang}"')
        lines.append(f"{cid}\tpopulation\t{population}")
        lines.append(f"{cid}\tarea\t{area}")
    lines.append("")
    lines.append("# land borders, stored in both directions")
    for a, b in BORDER_PAIRS:
        lines.append(f"{a}\tborders\t{b}")
        lines.append(f"{b}\tborders\t{a}")
    lines.append("")
    lines.append("# cities")
    for cid, label, country, population in CITIES:
        lines.append(f'{cid}\tlabel\t"{label}"')
        lines.append(f"{cid}\tlocated_in\t{country}")
        lines.append(f"{cid}\tpopulation\t{population}")
    lines.append("")
    lines.append("# rivers")
    for rid, label, countries in RIVERS:
        lines.append(f'{rid}\tlabel\t"{label}"')
        for country in countries:
            lines.append(f"{rid}\tflows_through\t{country}")
    lines.append("")
    lines.append("# heads of government")
    for pid, name, country, born in PEOPLE:
        lines.append(f'{pid}\tlabel\t"{name}"')
        lines.append(f"{country}\thead_of_government\t{pid}")
        lines.append(f"{pid}\tborn_in\t{born}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Question plans
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StepPlan:
    goal: str
    form: str
    # (rationale, code) per attempt: index 0 is the first generation, index
    # i+1 answers the repair request that quotes attempt i's code.
    attempts: tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class ItemPlan:
    id: str
    question: str
    golds: tuple[str, ...]
    steps: tuple[StepPlan, ...]
    correct: tuple[str, ...]
    # Answer lines for a final prompt that carries fabricated content.
    wrong: tuple[str, ...] = ()
    # Strings that only the broken attempts leave behind in a prompt.
    markers: tuple[str, ...] = ()
    # Answer lines when the final prompt carries an unverified-step notice.
    giveup: tuple[str, ...] = ("I am not sure",)

    @property
    def repairable(self) -> bool:
        return any(len(s.attempts) > 1 for s in self.steps)


UNANSWERABLE_IDS = {"syn-039", "syn-040"}


def clean(id_, question, golds, steps, correct, wrong=()):
    return ItemPlan(id_, question, tuple(golds), tuple(steps), tuple(correct), tuple(wrong))


def step(goal, form, *attempts):
    return StepPlan(goal, form, tuple(attempts))


PLANS: list[ItemPlan] = [
    # -- clean one-hop lookups ------------------------------------------------
    clean(
        "syn-001", "What is the capital of France?", ["Paris"],
        [step("Find the capital city of France", "entity",
              ("The capital_of relation points from a city to its country, so I follow incoming edges of France.",
               'return entity("France").in(capital_of);'))],
        ["Paris"],
    ),
    clean(
        "syn-002", "What is the capital of Germany?", ["Berlin"],
        [step("Find the capital city of Germany", "entity",
              ("Germany is also labelled Deutschland; its capital is the city with a capital_of edge into it.",
               'return entity("Deutschland").in(capital_of);'))],
        ["Berlin"],
    ),
    clean(
        "syn-003", "Which currency is used in Japan?", ["Yen"],
        [step("Look up the currency of Japan", "literal",
              ("The currency literal hangs directly off the country node.",
               'return entity("Japan").out(currency);'))],
        ["Yen"],
    ),
    clean(
        "syn-004", "Which language is spoken in Portugal?", ["Portuguese"],
        [step("Look up the official language of Portugal", "literal",
              ("Official languages are stored as literals on the country.",
               'return entity("Portugal").out(official_language);'))],
        ["Portuguese"],
    ),
    clean(
        "syn-005", "How many people live in Tokyo?", ["14000000"],
        [step("Look up the population of Tokyo", "literal",
              ("The city carries its population as an integer literal.",
               'return entity("Tokyo").out(population);'))],
        ["14000000"],
    ),
    clean(
        "syn-006", "Who is the head of government of Norway?", ["Ingrid Dahl"],
        [step("Find the head of government of Norway", "entity",
              ("The head_of_government edge points from the country to the person.",
               'return entity("Norway").out(head_of_government);'))],
        ["Ingrid Dahl"],
    ),
    # -- clean multi-hop ------------------------------------------------------
    clean(
        "syn-007", "Which currency is used in the country whose capital is Vienna?", ["Euro"],
        [step("Identify the country whose capital is Vienna", "entity",
              ("Vienna's outgoing capital_of edge names the country it is the capital of.",
               'return entity("Vienna").out(capital_of);')),
         step("Look up the currency of Austria", "literal",
              ("With the country fixed, its currency is one outgoing literal away.",
               'return entity("Austria").out(currency);'))],
        ["Euro"],
    ),
    clean(
        "syn-008", "What is the capital of the country where Milan is located?", ["Rome"],
        [step("Find the country where Milan is located", "entity",
              ("located_in points from the city to its country.",
               'return entity("Milan").out(located_in);')),
         step("Find the capital city of Italy", "entity",
              ("Incoming capital_of edges of Italy give its capital.",
               'return entity("Italy").in(capital_of);'))],
        ["Rome"],
    ),
    clean(
        "syn-009", "In which country was the head of government of Spain born?", ["Spain"],
        [step("Find the head of government of Spain", "entity",
              ("Start from the country and follow head_of_government.",
               'return entity("Spain").out(head_of_government);')),
         step("Find the city where Lucia Serrano was born", "entity",
              ("born_in points from the person to a city.",
               'return entity("Lucia Serrano").out(born_in);')),
         step("Find the country where Barcelona is located", "entity",
              ("The birth city's located_in edge names the country.",
               'return entity("Barcelona").out(located_in);'))],
        ["Spain"],
    ),
    clean(
        "syn-010", "Which rivers flow through Austria?", ["Danube"],
        [step("Find rivers that flow through Austria", "entity",
              ("Rivers point at countries via flows_through, so I read incoming edges.",
               'return entity("Austria").in(flows_through);'))],
        ["Danube"],
    ),
    # -- clean boolean checks -------------------------------------------------
    clean(
        "syn-011", "Is Berlin the capital of Germany?", ["yes"],
        [step("Check whether Berlin is the capital of Germany", "boolean",
              ("Berlin should appear among the cities with a capital_of edge into Germany.",
               'return entity("Germany").in(capital_of);'))],
        ["Yes"],
    ),
    clean(
        "syn-012", "Does the Rhine flow through Switzerland?", ["yes"],
        [step("Check whether the Rhine flows through Switzerland", "boolean",
              ("The Rhine should be among the rivers with a flows_through edge into Switzerland.",
               'return entity("Switzerland").in(flows_through);'))],
        ["Yes"],
    ),
    # -- clean set-shaped answers ---------------------------------------------
    clean(
        "syn-013", "Which countries border Germany?",
        ["Austria", "Belgium", "Denmark", "France", "Netherlands", "Poland", "Switzerland"],
        [step("List the countries that border Germany", "entity",
              ("borders is stored in both directions, so outgoing edges suffice.",
               'return entity("Germany").out(borders);'))],
        ["Austria", "Belgium", "Denmark", "France", "Netherlands"],
    ),
    clean(
        "syn-014", "Which cities are located in Italy?", ["Milan", "Naples", "Rome"],
        [step("List the cities located in Italy", "entity",
              ("Cities point at their country with located_in, so I read incoming edges.",
               'return entity("Italy").in(located_in);'))],
        ["Milan", "Naples", "Rome"],
    ),
    clean(
        "syn-015", "What is the population of the capital of Japan?", ["14000000"],
        [step("Find the capital city of Japan", "entity",
              ("Incoming capital_of edges of Japan give the capital.",
               'return entity("Japan").in(capital_of);')),
         step("Report the population of that capital, Tokyo", "literal",
              ("The city carries its population as an integer literal.",
               'return entity("Tokyo").out(population);'))],
        ["14000000"],
    ),
    clean(
        "syn-016", "Which currency is used in Ivory Coast?", ["West African CFA franc"],
        [step("Look up the currency of Ivory Coast", "literal",
              ("The country node lists its currency as a literal.",
               'return entity("Ivory Coast").out(currency);'))],
        ["West African CFA franc"],
    ),
    clean(
        "syn-017", "Who is the head of government of the country whose capital is Warsaw?", ["Piotr Kowalski"],
        [step("Identify the country whose capital is Warsaw", "entity",
              ("Warsaw's capital_of edge points at the country.",
               'return entity("Warsaw").out(capital_of);')),
         step("Find the head of government of Poland", "entity",
              ("From the country, head_of_government names the person.",
               'return entity("Poland").out(head_of_government);'))],
        ["Piotr Kowalski"],
    ),
    clean(
        "syn-018", "Which language is spoken in the country where Geneva is located?",
        ["French", "German", "Italian"],
        [step("Find the country where Geneva is located", "entity",
              ("located_in resolves the city to its country.",
               'return entity("Geneva").out(located_in);')),
         step("Look up the official languages of Switzerland", "literal",
              ("The country lists each official language as its own literal.",
               'return entity("Switzerland").out(official_language);'))],
        ["French", "German", "Italian"],
    ),
    clean(
        "syn-019", "Which countries does the Danube flow through?", ["Austria", "Germany"],
        [step("List the countries the Danube flows through", "entity",
              ("flows_through points from the river to each country.",
               'return entity("Danube").out(flows_through);'))],
        ["Austria", "Germany"],
    ),
    clean(
        "syn-020", "How many people live in the country where Krakow is located?", ["38000000"],
        [step("Find the country where Krakow is located", "entity",
              ("located_in maps the city to its country.",
               'return entity("Krakow").out(located_in);')),
         step("Look up the population of Poland", "literal",
              ("The country carries a population literal.",
               'return entity("Poland").out(population);'))],
        ["38000000"],
    ),
    clean(
        "syn-021", "Which cities in Spain have more than 1000000 residents?",
        ["Barcelona", "Madrid"],
        [step("Find cities in Spain whose population exceeds 1000000", "entity",
              ("Population literals above the threshold are mapped back to their cities through incoming population edges.",
               'let big = entity("Spain").in(located_in).out(population).filter(> 1000000);\n'
               'return big.in(population);'))],
        ["Barcelona", "Madrid"],
    ),
    clean(
        "syn-022", "Which rivers flow through both Switzerland and France?", ["Rhone"],
        [step("Find rivers that flow through both Switzerland and France", "entity",
              ("Intersecting the two incoming flows_through sets keeps the shared rivers.",
               'let swiss = entity("Switzerland").in(flows_through);\n'
               'return entity("France").in(flows_through).intersect(swiss);'))],
        ["Rhone"],
    ),
    clean(
        "syn-023", "Which countries border both France and Germany?", ["Belgium", "Switzerland"],
        [step("Find countries that border both France and Germany", "entity",
              ("Each country's borders set is intersected with the other's.",
               'let fr = entity("France").out(borders);\n'
               'return entity("Germany").out(borders).intersect(fr);'))],
        ["Belgium", "Switzerland"],
    ),
    clean(
        "syn-024", "Where was Yuki Tanaka born?", ["Osaka"],
        [step("Find the city where Yuki Tanaka was born", "entity",
              ("born_in points from the person to the city.",
               'return entity("Yuki Tanaka").out(born_in);'))],
        ["Osaka"],
    ),
    clean(
        "syn-025", "What is the capital of the Netherlands?", ["Amsterdam"],
        [step("Find the capital city of the Netherlands", "entity",
              ("Incoming capital_of edges of the country name its capital.",
               'return entity("Netherlands").in(capital_of);'))],
        ["Amsterdam"],
    ),
    clean(
        "syn-026", "Which currency is used in Brazil?", ["Real"],
        [step("Look up the currency of Brazil", "literal",
              ("Currency is a literal on the country node.",
               'return entity("Brazil").out(currency);'))],
        ["Real"],
    ),
    # -- repairable: first attempt is broken, the retry lands ------------------
    ItemPlan(
        "syn-027", "What is the capital of Switzerland?", ("Bern",),
        (step("Find the capital city of Switzerland", "entity",
              ("Every country has a has_capital edge to its capital.",
               'return entity("Switzerland").out(has_capital);'),
              ("The relation is capital_of and it points from the city to the country.",
               'return entity("Switzerland").in(capital_of);')),),
        ("Bern",), ("Zurich",), ("has_capital",),
    ),
    ItemPlan(
        "syn-028", "Which currency is used in Denmark?", ("Danish krone",),
        (step("Look up the currency of Denmark", "literal",
              ("Denmark uses the Euro like its neighbours; uses_currency should confirm it.",
               'return entity("Denmark").out(uses_currency);'),
              ("The relation is just called currency.",
               'return entity("Denmark").out(currency);')),),
        ("Danish krone",), ("Euro",), ("uses_currency", "Denmark uses the Euro"),
    ),
    ItemPlan(
        "syn-029", "Who is the head of government of Italy?", ("Marco Rossi",),
        (step("Find the head of government of Italy", "entity",
              ("The led_by edge gives the current leader.",
               'return entity("Italy").out(led_by);'),
              ("The catalog names this relation head_of_government.",
               'return entity("Italy").out(head_of_government);')),),
        ("Marco Rossi",), ("Giulia Bianchi",), ("led_by",),
    ),
    ItemPlan(
        "syn-030", "Is Lyon the capital of France?", ("no",),
        (step("Check whether Lyon is the capital of France", "boolean",
              ("Lyon is the capital of France.",
               'return entity("France").in(capital_of);'),
              ("Paris is the capital of France, so Lyon is not.",
               'let c = entity("France").in(capital_of);\nreturn c;')),),
        ("No",), ("Yes",), ("Lyon is the capital of France.",),
    ),
    ItemPlan(
        "syn-031", "Which rivers flow through Germany?", ("Danube", "Rhine"),
        (step("Find rivers that flow through Germany", "entity",
              ("The Volga crosses Germany on its way north; incoming flows_through edges will list it.",
               'return entity("Germany").in(flows_through)'),
              ("Incoming flows_through edges of Germany list its rivers.",
               'return entity("Germany").in(flows_through);')),),
        ("Danube", "Rhine"), ("Volga",), ("Volga",),
    ),
    ItemPlan(
        "syn-032", "What is the population of Oslo?", ("700000",),
        (step("Look up the population of Oslo", "literal",
              ("City sizes sit on an inhabitants edge.",
               'return entity("Oslo").out(inhabitants);'),
              ("The population edge holds the count.",
               'return entity("Oslo").out(population);')),),
        ("700000",), ("1500000",), ("inhabitants",),
    ),
    ItemPlan(
        "syn-033", "Which countries border Portugal?", ("Spain",),
        (step("List the countries that border Portugal", "entity",
              ("Portugal borders France along the Pyrenees, so I filter for it.",
               'return entity("Portugal").out(borders).filter(== "France");'),
              ("Portugal has a single land border; the unfiltered borders set shows it.",
               'return entity("Portugal").out(borders);')),),
        ("Spain",), ("France",), ("Pyrenees",),
    ),
    ItemPlan(
        "syn-034", "Which language is spoken in Austria?", ("German",),
        (step("Look up the official language of Austria", "literal",
              ("Austrian German is listed under the offical_language edge.",
               'return entity("Austria").out(offical_language);'),
              ("Fixing the spelling: the relation is official_language.",
               'return entity("Austria").out(official_language);')),),
        ("German",), ("Hungarian",), ("offical_language",),
    ),
    ItemPlan(
        "syn-035", "Who is the head of government of the Netherlands?", ("Johan de Vries",),
        (step("Find the head of government of the Netherlands", "entity",
              ("The full style of the state is the Kingdom of the Netherlands.",
               'return entity("Kingdom of the Netherlands").out(head_of_government);'),
              ("The graph labels this country Netherlands and Holland; either resolves.",
               'return entity("Holland").out(head_of_government);')),),
        ("Johan de Vries",), ("Willem Janssen",), ("Kingdom of the Netherlands",),
    ),
    ItemPlan(
        "syn-036", "Which countries does the Rhine flow through?",
        ("Germany", "Netherlands", "Switzerland"),
        (step("List the countries the Rhine flows through", "entity",
              ("The Rhine rises in Austria and its incoming edges name the countries it crosses.",
               'return entity("Rhine").in(flows_through);'),
              ("flows_through points outward from the river, so I follow outgoing edges.",
               'return entity("Rhine").out(flows_through);')),),
        ("Germany", "Netherlands", "Switzerland"), ("Austria",), ("rises in Austria",),
    ),
    ItemPlan(
        "syn-037", "What is the population of Marseille?", ("870000",),
        (step("Look up the population of Marseille", "literal",
              ("Marseille is recorded with a residents count.",
               'return entity("Marseille").out(residents);'),
              ("The population edge holds the figure.",
               'return entity("Marseille").out(population);')),),
        ("870000",), ("2000000",), ("residents",),
    ),
    ItemPlan(
        "syn-038", "Which cities are located in Belgium?", ("Antwerp", "Brussels"),
        (step("List the cities located in Belgium", "entity",
              ("Belgium's only notable city is Ghent; the country node should list it directly.",
               'return entity("Belgium").out(population);'),
              ("Cities hang off located_in edges pointing at the country.",
               'return entity("Belgium").in(located_in);')),),
        ("Antwerp", "Brussels"), ("Ghent",), ("Ghent",),
    ),
    # -- unanswerable: the graph has no grounding, every attempt fails ----------
    ItemPlan(
        "syn-039", "Who is the head of government of Sweden?", ("Astrid Lindqvist",),
        (step("Find the head of government of Sweden", "entity",
              ("Sweden's leader sits on a leads relation.",
               'return entity("Sweden").out(leads);'),
              ("Maybe the edge is called premier.",
               'return entity("Sweden").out(premier);'),
              ("It could be stored as governed_by.",
               'return entity("Sweden").out(governed_by);')),),
        ("Astrid Lindqvist",), ("Lars Viklund",), ("leads relation",),
    ),
    ItemPlan(
        "syn-040", "Which countries border Japan?", ("none",),
        (step("List the countries that border Japan", "entity",
              ("Island states still carry borders edges for maritime neighbours.",
               'return entity("Japan").out(borders);'),
              ("Perhaps maritime borders are kept on a separate relation.",
               'return entity("Japan").out(maritime_border);'),
              ("Try the reverse direction of borders.",
               'return entity("Japan").in(borders);')),),
        ("none",), ("South Korea", "Russia"), ("maritime neighbours",),
    ),
]


# --------------------------------------------------------------------------
# Authoring provider
# --------------------------------------------------------------------------


class PromptNotRecognized(AssertionError):
    pass


@dataclass
class AuthoringProvider:
    """Writes a reply for each prompt the pipeline sends and records it.

    Replies depend only on the prompt text, so the recorded fingerprint map
    replays identically through ScriptedProvider.
    """

    plans: list[ItemPlan]
    recorded: dict[str, str] = field(default_factory=dict)
    provider_id: str = "author"

    def __post_init__(self):
        self.by_question: dict[str, ItemPlan] = {}
        self.by_goal: dict[str, StepPlan] = {}
        for plan in self.plans:
            self.register_question(plan.question, plan)
            for sp in plan.steps:
                if sp.goal in self.by_goal:
                    raise AssertionError(f"duplicate goal across plans: {sp.goal!r}")
                self.by_goal[sp.goal] = sp

    def register_question(self, question: str, plan: ItemPlan) -> None:
        known = self.by_question.get(question)
        if known is not None and known.id != plan.id:
            raise AssertionError(f"question collision: {question!r}")
        self.by_question[question] = plan

    def send(self, bundle: PromptBundle) -> Completion:
        text = bundle.messages[-1].content
        reply = self.author(text)
        key = prompt_fingerprint(bundle)
        if key in self.recorded and self.recorded[key] != reply:
            raise AssertionError(f"conflicting replies for prompt {key[:12]}")
        self.recorded[key] = reply
        return Completion((reply,), self.provider_id, 0.0)

    # -- routing --------------------------------------------------------------

    def author(self, text: str) -> str:
        if text.startswith("Break the question below"):
            return self._author_decompose(text)
        if text.startswith("You answer one sub-task"):
            return self._author_step(text)
        if "Grounded reasoning steps:" in text:
            return self._author_final(text)
        if "Context facts:" in text:
            return self._author_retrieval(text)
        raise PromptNotRecognized(text[:80])

    def _question(self, text: str) -> str:
        for line in text.splitlines():
            if line.startswith("Question: "):
                return line[len("Question: "):]
        raise PromptNotRecognized("no question line")

    def _plan(self, text: str) -> ItemPlan:
        question = self._question(text)
        plan = self.by_question.get(question)
        if plan is None:
            raise PromptNotRecognized(f"unplanned question {question!r}")
        return plan

    def _author_decompose(self, text: str) -> str:
        plan = self._plan(text)
        return json.dumps(
            [{"goal": s.goal, "expected_form": s.form} for s in plan.steps]
        )

    def _author_step(self, text: str) -> str:
        goal = None
        for line in text.splitlines():
            if line.startswith("Sub-task: "):
                goal = line[len("Sub-task: "):]
                break
        sp = self.by_goal.get(goal or "")
        if sp is None:
            raise PromptNotRecognized(f"unplanned goal {goal!r}")
        if "Your previous code failed verification." in text:
            failed = self._failed_code(text)
            for i, (_, code) in enumerate(sp.attempts):
                if code == failed:
                    if i + 1 >= len(sp.attempts):
                        raise AssertionError(f"no attempt after {i} for goal {goal!r}")
                    rationale, code = sp.attempts[i + 1]
                    break
            else:
                raise AssertionError(f"failed code not in plan for goal {goal!r}")
        else:
            rationale, code = sp.attempts[0]
        return f"{rationale}\n{FENCE_TAG}\n{code}\n{FENCE_TAG}"

    @staticmethod
    def _failed_code(text: str) -> str:
        head = text.split("Failed code:\n", 1)[1]
        block = head.split("\n\nProblems:", 1)[0]
        return "\n".join(
            line[4:] if line.startswith("    ") else line for line in block.splitlines()
        )

    def _author_final(self, text: str) -> str:
        plan = self._plan(text)
        if UNVERIFIED_NOTICE in text:
            return "\n".join(plan.giveup)
        if any(marker in text for marker in plan.markers):
            return "\n".join(plan.wrong)
        return "\n".join(plan.correct)

    def _author_retrieval(self, text: str) -> str:
        plan = self._plan(text)
        facts = text.split("Context facts:\n", 1)[1].split("\n\nGive up to", 1)[0]
        hay = facts.casefold()
        for gold in plan.golds:
            if normalize_answer(gold, TEXT) in hay:
                return "\n".join(plan.correct)
        return "I am not sure"


# --------------------------------------------------------------------------
# Build and check
# --------------------------------------------------------------------------


def static_checks(plans: list[ItemPlan]) -> None:
    seen_ids = set()
    for plan in plans:
        assert plan.id not in seen_ids, plan.id
        seen_ids.add(plan.id)
        golds = {normalize_answer(g, TEXT) for g in plan.golds}
        assert normalize_answer(plan.correct[0], TEXT) in golds, plan.id
        for line in plan.wrong + plan.giveup:
            assert normalize_answer(line, TEXT) not in golds, (plan.id, line)
        for sp in plan.steps:
            codes = [code for _, code in sp.attempts]
            assert len(set(codes)) == len(codes), (plan.id, "attempt codes must differ")
        # Markers must not leak into the good attempts or the verified answers.
        for marker in plan.markers:
            for sp in plan.steps:
                good_rationale, good_code = sp.attempts[-1]
                if plan.id not in UNANSWERABLE_IDS:
                    assert marker not in good_rationale, (plan.id, marker)
                    assert marker not in good_code, (plan.id, marker)
            assert marker not in plan.question, (plan.id, marker)


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    static_checks(PLANS)

    graph_text = emit_graph()
    (FIXTURES / "graph.tsv").write_text(graph_text, encoding="utf-8")
    graph = load_graph(FIXTURES / "graph.tsv")
    print(f"graph: {len(graph)} triples, {len(graph.entities)} entities, "
          f"{len(graph.relation_catalog)} relations")

    items = [
        EvalItem(p.id, p.question, p.golds, "synthetic", TEXT) for p in PLANS
    ]
    author = AuthoringProvider(PLANS)

    # Register every perturbed question so its decompose and final prompts
    # are authored with the same plan as the original.
    perturbed_sets = {}
    for kind in PERTURB_KINDS:
        variants = [perturb(item, kind, graph=graph) for item in items]
        for plan, variant in zip(PLANS, variants):
            author.register_question(variant.question, plan)
        perturbed_sets[kind] = variants

    records = {}
    for method in ("kdcm-code", "kdcm-plain", "retrieval-only"):
        records[method] = run_method(method, items, graph, author)
    for kind, variants in perturbed_sets.items():
        records[f"kdcm-code/{kind}"] = run_method("kdcm-code", variants, graph, author)

    # Per-item expectations: the verifying method recovers every repairable
    # item and misses only the two unanswerable ones; the ablation also
    # misses every item whose first attempt was poisoned.
    for plan, rec in zip(PLANS, records["kdcm-code"]):
        if plan.id in UNANSWERABLE_IDS:
            assert rec.chain_status == "DEGRADED", (plan.id, rec)
            assert rec.first_correct_rank is None, (plan.id, rec)
        else:
            assert rec.chain_status == "CLEAN", (plan.id, rec)
            assert rec.first_correct_rank == 1, (plan.id, rec)
    for plan, rec in zip(PLANS, records["kdcm-plain"]):
        assert rec.chain_status == "CLEAN", (plan.id, rec)
        if plan.repairable or plan.id in UNANSWERABLE_IDS:
            assert rec.first_correct_rank is None, (plan.id, rec)
        else:
            assert rec.first_correct_rank == 1, (plan.id, rec)

    summary = {}
    for name, recs in records.items():
        summary[name] = hit_at_k(recs, 1)
        print(f"hit@1 {name}: {summary[name]:.4f}")
    assert summary["kdcm-code"] == 38 / 40, summary
    assert summary["kdcm-plain"] == 26 / 40, summary
    for kind in PERTURB_KINDS:
        assert summary[f"kdcm-code/{kind}"] == summary["kdcm-code"], kind

    corpus_lines = [
        json.dumps(
            {"id": p.id, "question": p.question, "answers": list(p.golds),
             "dataset": "synthetic", "mode": "text"},
            sort_keys=True, ensure_ascii=False,
        )
        for p in PLANS
    ]
    (FIXTURES / "corpus.jsonl").write_text("\n".join(corpus_lines) + "\n", encoding="utf-8")

    script = dict(sorted(author.recorded.items()))
    (FIXTURES / "scripts.json").write_text(
        json.dumps(script, indent=1, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"corpus: {len(PLANS)} items; scripts: {len(script)} prompt entries")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
