import random

import pytest
from hypothesis import given, strategies as st

from treedec.depgraph import (
    UD_LABELS,
    ConlluError,
    Token,
    TokenKind,
    WordTree,
    format_conllu,
    is_projective,
    load_labels,
    parse_conllu,
    segment,
    word_subword_map,
)

from conftest import EXAMPLE1_TREE, crossing_free, random_projective_tree

EXAMPLE1_CONLLU = """\
# text = John put the coals out
1\tJohn\t_\tPROPN\t_\t_\t2\tnsubj\t_\t_
2\tput\t_\tVERB\t_\t_\t0\troot\t_\t_
3\tthe\t_\tDET\t_\t_\t4\tdet\t_\t_
4\tcoals\t_\tNOUN\t_\t_\t2\tobj\t_\t_
5\tout\t_\tADP\t_\t_\t2\tcompound:prt\t_\t_
"""


def test_label_inventory_has_45_distinct_labels():
    assert len(UD_LABELS) == 45
    assert len(set(UD_LABELS)) == 45
    assert load_labels() == UD_LABELS


def test_load_labels_from_file(tmp_path):
    p = tmp_path / "labels.txt"
    p.write_text("# comment\nnsubj\nobj\n\n")
    assert load_labels(p) == ("nsubj", "obj")
    p.write_text("nsubj\nnsubj\n")
    with pytest.raises(ValueError):
        load_labels(p)


def test_minimal_two_word_tree():
    text = "1\tthe\t_\t_\t_\t_\t2\tdet\t_\t_\n2\tcat\t_\t_\t_\t_\t0\troot\t_\t_\n"
    [tree] = parse_conllu(text)
    assert tree.edges() == {(1, 0, "det")}


def test_example1_tree():
    [tree] = parse_conllu(EXAMPLE1_CONLLU)
    assert tree == EXAMPLE1_TREE
    assert tree.edges() == {(1, 0, "nsubj"), (3, 2, "det"), (1, 3, "obj"), (1, 4, "compound:prt")}
    assert tree.heads.index(0) == 1


def test_empty_input():
    assert parse_conllu("") == []
    assert parse_conllu("\n\n") == []


def test_multiword_and_empty_nodes_skipped():
    text = (
        "1-2\tzum\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "1\tzu\t_\t_\t_\t_\t3\tcase\t_\t_\n"
        "2\tdem\t_\t_\t_\t_\t3\tdet\t_\t_\n"
        "2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n"
        "3\tHaus\t_\t_\t_\t_\t0\troot\t_\t_\n"
    )
    [tree] = parse_conllu(text)
    assert tree.forms == ("zu", "dem", "Haus")


def test_several_sentences():
    trees = parse_conllu(EXAMPLE1_CONLLU + "\n" + EXAMPLE1_CONLLU)
    assert len(trees) == 2


def test_malformed_line_names_line_number():
    text = "1\tthe\t_\t_\t_\t_\t2\tdet\t_\t_\n2\tcat\t_\t_\n"
    with pytest.raises(ConlluError, match="line 2"):
        parse_conllu(text)


def test_non_integer_head():
    with pytest.raises(ConlluError, match="line 1"):
        parse_conllu("1\tthe\t_\t_\t_\t_\tx\tdet\t_\t_\n")


def test_cycle_detected():
    text = "1\ta\t_\t_\t_\t_\t2\tdep\t_\t_\n2\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n"
    with pytest.raises(ConlluError, match="cyclic"):
        parse_conllu(text)


def test_self_loop_detected():
    with pytest.raises(ConlluError):
        parse_conllu("1\ta\t_\t_\t_\t_\t1\tdep\t_\t_\n")


def test_round_trip_on_retained_columns(rng):
    trees = [random_projective_tree(rng, rng.randint(1, 9)) for _ in range(30)]
    assert parse_conllu(format_conllu(trees)) == trees


def test_projectivity_examples():
    assert is_projective(EXAMPLE1_TREE)
    crossing = WordTree(("a", "b", "c", "d"), (3, 4, 0, 3), ("dep", "dep", "root", "dep"))
    assert crossing.edges() >= {(2, 0, "dep"), (3, 1, "dep")}
    assert not is_projective(crossing)
    assert is_projective(WordTree(("hi",), (0,), ("root",)))


@given(st.integers(1, 10), st.integers(0, 10_000))
def test_projectivity_agrees_with_brute_force(n, seed):
    rng = random.Random(seed)
    # arbitrary (possibly non-projective) trees: random parent among earlier-attached words
    order = list(range(n))
    rng.shuffle(order)
    heads = [0] * n
    for k, w in enumerate(order[1:], 1):
        heads[w] = order[rng.randrange(k)] + 1
    tree = WordTree(tuple(map(str, range(n))), tuple(heads), tuple("dep" for _ in range(n)))
    assert is_projective(tree) == crossing_free(tree)


def test_generated_projective_trees_pass(rng):
    for _ in range(100):
        t = random_projective_tree(rng, rng.randint(1, 12))
        assert is_projective(t) and crossing_free(t)


def test_segment_bookkeeping():
    toks = segment("Jo@@ hn put")
    assert [t.word_id for t in toks] == [0, 0, 1]
    assert [t.is_word_final for t in toks] == [False, True, True]


def test_word_subword_map_examples():
    assert word_subword_map(segment("Jo@@ hn put")) == {0: [0, 1], 1: [2]}
    assert word_subword_map(segment("a b c")) == {0: [0], 1: [1], 2: [2]}
    assert word_subword_map(segment("a@@ b@@ c")) == {0: [0, 1, 2]}


def test_word_subword_map_rejects_unterminated_word():
    with pytest.raises(ValueError):
        word_subword_map(segment("a b@@"))


def test_word_subword_map_skips_non_subwords():
    toks = segment("a b") + [Token(2, "LA:det", TokenKind.TRANSITION)]
    assert word_subword_map(toks) == {0: [0], 1: [1]}


@given(st.lists(st.tuples(st.sampled_from(["x", "yy", "z"]), st.booleans()), min_size=1, max_size=15))
def test_word_subword_map_partitions_subwords(pieces):
    text = [p + ("" if final else "@@") for p, final in pieces]
    text[-1] = text[-1].removesuffix("@@")
    toks = segment(text)
    m = word_subword_map(toks)
    flat = [i for ids in m.values() for i in ids]
    assert flat == list(range(len(toks)))
    for ids in m.values():
        assert ids == list(range(ids[0], ids[-1] + 1))
        assert toks[ids[-1]].is_word_final
        assert not any(toks[i].is_word_final for i in ids[:-1])
