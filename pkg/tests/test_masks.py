import numpy as np
import pytest
from hypothesis import given, strategies as st

from treedec.depgraph import DepGraph
from treedec.masks import NEG_INF, MaskKind, bidirectional_mask, parent_mask, vanilla_mask
from treedec.transitions import StackState, Vocabulary, parse_sequence, run, step, valid_mask

from conftest import EXAMPLE1_SEQUENCE

INF = -np.inf


def softmax(x):
    e = np.exp(x - x.max(-1, keepdims=True))
    return e / e.sum(-1, keepdims=True)


def test_vanilla_examples():
    assert np.array_equal(vanilla_mask(3).entries, np.array([[0, INF, INF], [0, 0, INF], [0, 0, 0]]))
    assert np.array_equal(vanilla_mask(1).entries, np.array([[0.0]]))
    assert vanilla_mask(3).kind is MaskKind.VANILLA
    with pytest.raises(ValueError):
        vanilla_mask(0)


def test_vanilla_softmax_ignores_future():
    L = np.random.default_rng(0).normal(size=(6, 6))
    w = softmax(L + vanilla_mask(6).additive(np.float64))
    assert np.all(np.triu(w, 1) == 0)


def test_bidirectional_examples():
    m = bidirectional_mask(4, 2).entries
    assert all(np.array_equal(row, [0, 0, INF, INF]) for row in m)
    assert np.array_equal(bidirectional_mask(5, 5).entries, np.zeros((5, 5)))
    with pytest.raises(ValueError):
        bidirectional_mask(3, 4)


def test_bidirectional_n1_is_delta_on_first_position():
    L = np.random.default_rng(1).normal(size=(4, 4))
    w = softmax(L + bidirectional_mask(4, 1).additive(np.float64))
    assert np.allclose(w[:, 0], 1.0)


def test_additive_uses_large_negative_constant():
    assert vanilla_mask(2).additive()[0, 1] == np.float32(NEG_INF)


def test_parent_mask_edgeless_is_identity():
    assert np.array_equal(parent_mask(DepGraph(), 4).visible, np.eye(4, dtype=bool))


def test_parent_mask_example1():
    g = run(parse_sequence(EXAMPLE1_SEQUENCE)).graph()
    m = parent_mask(g, len(g.tokens)).visible
    coals, put, ra_obj = 5, 2, 7
    assert g.tokens[coals].surface == "coals" and g.tokens[ra_obj].surface == "RA:obj"
    assert set(np.flatnonzero(m[coals])) == {coals, put, ra_obj}
    # both pieces of John see put and LA:nsubj
    for j in (0, 1):
        assert set(np.flatnonzero(m[j])) == {j, 2, 3}


def test_ascii_dump():
    assert bidirectional_mask(2, 1).ascii() == "0 -\n0 -"


def _random_trace(rng: np.random.Generator, vocab: Vocabulary, n_steps: int) -> list[StackState]:
    states = [StackState()]
    for _ in range(n_steps):
        m = valid_mask(states[-1], vocab, max_subwords=10)
        m[vocab.eos] = False
        if not m.any():
            break
        states.append(step(states[-1], vocab.decode(int(rng.choice(np.flatnonzero(m))))))
    return states


VOCAB = Vocabulary(["a", "b@@", "c", "d@@", "e"], ("det", "obj", "nsubj"))


def check_trace(states: list[StackState]) -> int:
    """Count invariant violations along one decode trace."""
    bad = 0
    final = states[-1].graph()
    d = len(final.tokens)
    for n in range(1, d + 1):
        g = states[n].graph()
        bi = bidirectional_mask(d, n).visible
        pm = parent_mask(g, d).visible
        # self-visibility within the prefix
        bad += int(not all(bi[i, i] and pm[i, i] for i in range(n)))
        # prefix consistency: vanilla row n-1 equals the bidirectional(n) row pattern
        bad += int(not np.array_equal(vanilla_mask(d).visible[n - 1], bi[n - 1]))
        # parent visibility never exceeds the bidirectional mask of the same prefix
        bad += int(np.any(pm[:n, :n] & ~bi[:n, :n]) or np.any(pm[:n, n:]))
        # incremental: the final graph restricted to edges created so far gives the same mask
        bad += int(not np.array_equal(parent_mask(final, d, until=n).visible, pm))
        # a row changes only if an edge into that token appeared at this step
        if n > 1:
            prev = parent_mask(states[n - 1].graph(), d).visible
            changed = {i for i in range(d) if not np.array_equal(prev[i], pm[i])}
            new_deps = {e.dependent for e in g.edges if e.step == n - 1}
            bad += int(not changed <= new_deps)
    return bad


@given(st.integers(0, 2**32 - 1))
def test_mask_invariants_on_random_traces(seed):
    rng = np.random.default_rng(seed)
    assert check_trace(_random_trace(rng, VOCAB, 25)) == 0
