import io
import random

import pytest

from kdchain.kgstore import (
    DECIMAL,
    ENTITY,
    INTEGER,
    TEXT,
    Graph,
    MalformedRecord,
    Term,
    Triple,
    load_graph,
    normalize_label,
)

from generators import random_graph


def test_load_tsv_counts(toy_graph):
    assert len(toy_graph) == 17
    assert toy_graph.has_relation("capital_of")
    assert toy_graph.has_entity("paris")
    assert not toy_graph.has_entity("madrid")


def test_object_typing():
    g = load_graph(io.StringIO('a\tr\tb\na\tn\t42\na\td\t4.5\na\tt\t"hello world"\n'))
    kinds = {t.predicate: t.obj.kind for t in g}
    assert kinds == {"r": ENTITY, "n": INTEGER, "d": DECIMAL, "t": TEXT}


def test_unquoted_whitespace_object_is_text():
    g = load_graph(io.StringIO("a\tr\tNew York\n"))
    (triple,) = list(g)
    assert triple.obj.kind == TEXT
    assert triple.obj.value == "New York"


def test_neighbors_out_and_in(toy_graph):
    out = toy_graph.neighbors("paris", "capital_of", "out")
    assert [t.value for t in out] == ["france"]
    inn = toy_graph.neighbors("france", "capital_of", "in")
    assert [t.value for t in inn] == ["paris"]
    with pytest.raises(ValueError):
        toy_graph.neighbors("paris", "capital_of", "sideways")


def test_neighbors_sorted_and_unique():
    g = load_graph(io.StringIO("a\tr\tc\na\tr\tb\nb\tr\tc\n"))
    assert [t.value for t in g.neighbors("a", "r")] == ["b", "c"]
    assert [t.value for t in g.neighbors("c", "r", "in")] == ["a", "b"]


def test_labels_resolve_casefolded_and_aliased(toy_graph):
    assert toy_graph.resolve_label("PARIS") == ("paris",)
    assert toy_graph.resolve_label("  Holland ") == ("netherlands",)
    assert toy_graph.resolve_label("deutschland") == ("germany",)
    assert toy_graph.resolve_label("nowhere") == ()
    assert "Holland" in toy_graph.labels_of("netherlands")


def test_label_binding_from_fourth_column_and_label_predicate(toy_graph):
    # both mechanisms feed the same lookup table
    assert normalize_label("Deutschland") in toy_graph.normalized_labels
    assert toy_graph.resolve_label("Germany") == ("germany",)


def test_contains(toy_graph):
    assert toy_graph.contains(Triple("paris", "capital_of", Term("france")))
    assert not toy_graph.contains(Triple("paris", "capital_of", Term("germany")))


def test_strict_malformed_raises_with_line_number():
    with pytest.raises(MalformedRecord) as err:
        load_graph(io.StringIO("a\tr\tb\nbroken line without tabs\n"))
    assert "line 2" in str(err.value)
    assert err.value.line == 2


def test_lenient_collects_malformed():
    g = load_graph(io.StringIO("a\tr\tb\nbroken\nc\tr\td\n"), lenient=True)
    assert len(g) == 2
    assert len(g.malformed) == 1
    assert g.malformed[0].line == 2


def test_blank_and_comment_lines_skipped():
    g = load_graph(io.StringIO("# comment\n\na\tr\tb\n"))
    assert len(g) == 1


def test_duplicate_triples_collapse():
    g = load_graph(io.StringIO("a\tr\tb\na\tr\tb\n"))
    assert len(g) == 1


def test_nt_like_format_keeps_full_iris():
    text = '<http://x/a> <http://x/r> <http://x/b> .\n<http://x/a> <label> "Label A" .\n'
    g = load_graph(io.StringIO(text), fmt="nt")
    assert g.has_entity("http://x/a")
    assert g.resolve_label("label a") == ("http://x/a",)
    assert [t.value for t in g.neighbors("http://x/a", "http://x/r")] == ["http://x/b"]


def test_graph_equality_ignores_construction_order():
    t1 = Triple("a", "r", Term("b"))
    t2 = Triple("b", "r", Term("c"))
    assert Graph([t1, t2]) == Graph([t2, t1])
    assert Graph([t1], [("a", "A")]) != Graph([t1])


def test_index_inversion_random_graphs():
    # out/in adjacency must stay mutually consistent on every triple
    rng = random.Random(7)
    for _ in range(10):
        g = random_graph(rng, max_triples=120)
        for triple in g:
            fwd = g.neighbors(triple.subject, triple.predicate, "out")
            assert triple.obj in fwd
            back = g.neighbors(triple.obj.value, triple.predicate, "in")
            assert Term(triple.subject) in back


def test_iteration_is_sorted(toy_graph):
    triples = list(toy_graph)
    assert triples == sorted(triples)
