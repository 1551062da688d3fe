"""Arc-standard transition system over subwords.

Shift is replaced by generating subwords; a word enters the stack once its
word-final subword is produced. Arcs connect the two topmost words and also
route edges through the arc token itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .depgraph import (
    CONTINUATION,
    UD_LABELS,
    DepEdge,
    DepGraph,
    Token,
    TokenKind,
    WordTree,
    is_projective,
)

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

SUBWORD, LEFT, RIGHT, END = "subword", "left", "right", "eos"


class InvalidTransition(ValueError):
    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"step {index}: {message}"
        super().__init__(message)
        self.index = index


class NotProjective(ValueError):
    pass


@dataclass(frozen=True)
class Transition:
    kind: str
    surface: str = ""
    label: str = ""

    @classmethod
    def subword(cls, surface: str) -> "Transition":
        return cls(SUBWORD, surface=surface)

    @classmethod
    def left(cls, label: str) -> "Transition":
        return cls(LEFT, label=label)

    @classmethod
    def right(cls, label: str) -> "Transition":
        return cls(RIGHT, label=label)

    @classmethod
    def eos(cls) -> "Transition":
        return cls(END)

    @classmethod
    def parse(cls, text: str) -> "Transition":
        if text.startswith("LA:"):
            return cls.left(text[3:])
        if text.startswith("RA:"):
            return cls.right(text[3:])
        if text == EOS:
            return cls.eos()
        return cls.subword(text)

    @property
    def is_arc(self) -> bool:
        return self.kind in (LEFT, RIGHT)

    @property
    def is_word_final(self) -> bool:
        return self.kind == SUBWORD and not self.surface.endswith(CONTINUATION)

    def __str__(self) -> str:
        if self.kind == LEFT:
            return f"LA:{self.label}"
        if self.kind == RIGHT:
            return f"RA:{self.label}"
        if self.kind == END:
            return EOS
        return self.surface


def format_sequence(seq: Iterable[Transition]) -> str:
    return " ".join(str(x) for x in seq)


def parse_sequence(text: str) -> list[Transition]:
    return [Transition.parse(tok) for tok in text.split()]


class Vocabulary:
    """Joint vocabulary: specials, then the 2*|labels| arc tokens, then subwords."""

    def __init__(self, subwords: Iterable[str], labels: Sequence[str] = UD_LABELS):
        self.labels = tuple(labels)
        self.itos: list[str] = list(SPECIALS)
        for lab in self.labels:
            self.itos.append(f"LA:{lab}")
            self.itos.append(f"RA:{lab}")
        reserved = set(self.itos)
        for sw in sorted(set(subwords)):
            if sw in reserved or sw.startswith(("LA:", "RA:")):
                continue
            self.itos.append(sw)
            reserved.add(sw)
        self.stoi = {s: i for i, s in enumerate(self.itos)}
        self.n_transitions = 2 * len(self.labels)
        n = len(self.itos)
        first_sub = len(SPECIALS) + self.n_transitions
        self.is_left = np.zeros(n, dtype=bool)
        self.is_right = np.zeros(n, dtype=bool)
        self.is_left[len(SPECIALS):first_sub:2] = True
        self.is_right[len(SPECIALS) + 1:first_sub:2] = True
        self.is_subword = np.zeros(n, dtype=bool)
        self.is_subword[first_sub:] = True
        self.is_final = self.is_subword & np.array([not s.endswith(CONTINUATION) for s in self.itos])
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad(self) -> int:
        return 0

    @property
    def bos(self) -> int:
        return 1

    @property
    def eos(self) -> int:
        return 2

    @property
    def unk(self) -> int:
        return 3

    @property
    def is_arc(self) -> np.ndarray:
        return self.is_left | self.is_right

    def encode(self, x: Transition) -> int:
        return self.stoi.get(str(x), self.unk)

    def decode(self, i: int) -> Transition:
        return Transition.parse(self.itos[i])

    def encode_tokens(self, pieces: Iterable[str]) -> list[int]:
        return [self.stoi.get(p, self.unk) for p in pieces]

    def to_json(self) -> dict:
        first_sub = len(SPECIALS) + self.n_transitions
        return {"labels": list(self.labels), "subwords": self.itos[first_sub:]}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(obj["subwords"], obj["labels"])


class SourceVocabulary:
    """Plain token vocabulary for the encoder side."""

    def __init__(self, pieces: Iterable[str]):
        self.itos = list(SPECIALS) + sorted(set(pieces) - set(SPECIALS))
        self.stoi = {s: i for i, s in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def encode_tokens(self, pieces: Iterable[str]) -> list[int]:
        return [self.stoi.get(p, 3) for p in pieces]

    def to_json(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    @classmethod
    def from_json(cls, obj: list[str]) -> "SourceVocabulary":
        return cls(obj)


@dataclass(frozen=True)
class StackState:
    """Parser configuration; every field is an immutable tuple so states can be shared."""

    sigma: tuple[int, ...] = ()
    words: tuple[tuple[int, ...], ...] = ()
    pending: tuple[int, ...] = ()
    tokens: tuple[Token, ...] = ()
    edges: tuple[DepEdge, ...] = ()
    word_edges: tuple[DepEdge, ...] = ()
    heads: tuple[int, ...] = field(default=())  # word -> head word, -1 if none yet
    finished: bool = False

    @property
    def n_tokens(self) -> int:
        return len(self.tokens)

    @property
    def n_subwords(self) -> int:
        return sum(1 for t in self.tokens if t.kind is TokenKind.SUBWORD)

    def graph(self) -> DepGraph:
        roots = {w for w, h in enumerate(self.heads) if h < 0}
        return DepGraph(list(self.tokens), list(self.edges), list(self.word_edges), roots)


def _arc_edges(state: StackState, head: int, dep: int, label: str, x: int) -> list[DepEdge]:
    hs, ds = state.words[head], state.words[dep]
    out = [DepEdge(h, d, label, x) for h in hs for d in ds]
    out += [DepEdge(x, d, label, x) for d in ds]
    out += [DepEdge(h, x, label, x) for h in hs]
    return out


def step(state: StackState, x: Transition) -> StackState:
    """Apply one transition; returns a new state."""
    pos = state.n_tokens
    if state.finished:
        raise InvalidTransition("sequence already ended")
    if x.kind == SUBWORD:
        final = x.is_word_final
        wid = len(state.words)
        tok = Token(pos, x.surface, TokenKind.SUBWORD, wid, final)
        pending = state.pending + (pos,)
        if final:
            return replace(
                state,
                sigma=state.sigma + (wid,),
                words=state.words + (pending,),
                pending=(),
                tokens=state.tokens + (tok,),
                heads=state.heads + (-1,),
            )
        return replace(state, pending=pending, tokens=state.tokens + (tok,))
    if x.kind == END:
        if state.pending:
            raise InvalidTransition("end of sequence inside an open word")
        tok = Token(pos, EOS, TokenKind.CONTROL)
        return replace(state, tokens=state.tokens + (tok,), finished=True)
    if x.kind not in (LEFT, RIGHT):
        raise InvalidTransition(f"unknown transition kind {x.kind!r}")
    if state.pending:
        raise InvalidTransition(f"{x} while a word is still open")
    if len(state.sigma) < 2:
        raise InvalidTransition(f"{x} needs two words on the stack, have {len(state.sigma)}")
    a, b = state.sigma[-1], state.sigma[-2]
    if x.kind == LEFT:
        head, dep, sigma = a, b, state.sigma[:-2] + (a,)
    else:
        head, dep, sigma = b, a, state.sigma[:-1]
    tok = Token(pos, str(x), TokenKind.TRANSITION)
    heads = list(state.heads)
    heads[dep] = head
    return replace(
        state,
        sigma=sigma,
        tokens=state.tokens + (tok,),
        edges=state.edges + tuple(_arc_edges(state, head, dep, x.label, pos)),
        word_edges=state.word_edges + (DepEdge(head, dep, x.label, pos),),
        heads=tuple(heads),
    )


def execute(seq: Iterable[Transition], state: StackState | None = None) -> DepGraph:
    state = StackState() if state is None else state
    for i, x in enumerate(seq):
        try:
            state = step(state, x)
        except InvalidTransition as err:
            raise InvalidTransition(str(err), i) from None
    if state.pending:
        raise InvalidTransition("sequence ends inside an open word")
    return state.graph()


def run(seq: Iterable[Transition]) -> StackState:
    state = StackState()
    for i, x in enumerate(seq):
        try:
            state = step(state, x)
        except InvalidTransition as err:
            raise InvalidTransition(str(err), i) from None
    return state


def oracle(tree: WordTree, segmented: Sequence[str] | Sequence[Token]) -> list[Transition]:
    """Arc-standard derivation of ``tree``, reducing as early as possible.

    ``segmented`` is the subword sequence of the sentence; it must
    re-assemble into the tree's word forms. The root edge is not emitted.
    """
    if not is_projective(tree):
        raise NotProjective("tree is not projective")
    pieces = [t.surface if isinstance(t, Token) else t for t in segmented]
    words: list[list[str]] = [[]]
    for p in pieces:
        words[-1].append(p)
        if not p.endswith(CONTINUATION):
            words.append([])
    if words[-1]:
        raise ValueError("segmentation ends inside a word")
    words.pop()
    if len(words) != len(tree):
        raise ValueError(f"segmentation has {len(words)} words, tree has {len(tree)}")

    head = [h - 1 for h in tree.heads]
    n_children = [0] * len(tree)
    for h in head:
        if h >= 0:
            n_children[h] += 1
    attached = [0] * len(tree)
    out: list[Transition] = []
    sigma: list[int] = []
    for w, pieces_w in enumerate(words):
        out.extend(Transition.subword(p) for p in pieces_w)
        sigma.append(w)
        while len(sigma) >= 2:
            a, b = sigma[-1], sigma[-2]
            if head[b] == a and attached[b] == n_children[b]:
                out.append(Transition.left(tree.labels[b]))
                attached[a] += 1
                del sigma[-2]
            elif head[a] == b and attached[a] == n_children[a]:
                out.append(Transition.right(tree.labels[a]))
                attached[b] += 1
                sigma.pop()
            else:
                break
    return out


def valid_mask(
    state: StackState,
    vocab: Vocabulary,
    strict: bool = False,
    max_subwords: int | None = None,
    allow_arcs: bool = True,
) -> np.ndarray:
    """Transitions legal in ``state``.

    Subwords stay legal until the subword budget is spent; with one subword
    left only word-final pieces are allowed, so an open word can always be
    closed. In strict mode EOS requires a single stack word (a tree).
    """
    mask = np.zeros(len(vocab), dtype=bool)
    if state.finished:
        return mask
    used = state.n_subwords
    if max_subwords is None or used < max_subwords - 1:
        mask |= vocab.is_subword
    elif used == max_subwords - 1:
        mask |= vocab.is_final
    closed = not state.pending
    if allow_arcs and closed and len(state.sigma) >= 2:
        mask |= vocab.is_arc
    if closed and (not strict or not allow_arcs or len(state.sigma) == 1):
        mask[vocab.eos] = True
    return mask
