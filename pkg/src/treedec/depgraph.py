"""Dependency graphs over subword tokens, CoNLL-U I/O and projectivity."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

CONTINUATION = "@@"

# 37 universal relations plus the 8 subtypes most common in English/German UD.
UD_LABELS = (
    "acl", "advcl", "advmod", "amod", "appos", "aux", "case", "cc", "ccomp",
    "clf", "compound", "conj", "cop", "csubj", "dep", "det", "discourse",
    "dislocated", "expl", "fixed", "flat", "goeswith", "iobj", "list", "mark",
    "nmod", "nsubj", "nummod", "obj", "obl", "orphan", "parataxis", "punct",
    "reparandum", "root", "vocative", "xcomp",
    "acl:relcl", "aux:pass", "compound:prt", "csubj:pass", "det:predet",
    "nmod:poss", "nsubj:pass", "obl:tmod",
)


class ConlluError(ValueError):
    pass


def load_labels(path: str | Path | None = None) -> tuple[str, ...]:
    """Label inventory, one label per line; the 45 default UD labels if no path."""
    if path is None:
        return UD_LABELS
    labels = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    labels = [lab for lab in labels if lab and not lab.startswith("#")]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate labels in {path}")
    return tuple(labels)


class TokenKind(enum.Enum):
    SUBWORD = "subword"
    TRANSITION = "transition"
    CONTROL = "control"


@dataclass(frozen=True)
class Token:
    id: int
    surface: str
    kind: TokenKind = TokenKind.SUBWORD
    word_id: int | None = None
    is_word_final: bool = True


@dataclass(frozen=True)
class DepEdge:
    head: int
    dependent: int
    label: str
    step: int = -1  # position of the transition that created the edge


@dataclass(frozen=True)
class WordTree:
    """One sentence as words with 1-based heads (0 = root) and labels."""

    forms: tuple[str, ...]
    heads: tuple[int, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.forms) == len(self.heads) == len(self.labels)):
            raise ValueError("forms, heads and labels must have equal length")

    def __len__(self):
        return len(self.forms)

    def edges(self) -> set[tuple[int, int, str]]:
        """Word-level edges (head, dependent, label), 0-based, root edge excluded."""
        return {(h - 1, d, lab) for d, (h, lab) in enumerate(zip(self.heads, self.labels)) if h > 0}

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.forms]
        for d, h in enumerate(self.heads):
            if h > 0:
                kids[h - 1].append(d)
        return kids


@dataclass
class DepGraph:
    tokens: list[Token] = field(default_factory=list)
    edges: list[DepEdge] = field(default_factory=list)
    word_edges: list[DepEdge] = field(default_factory=list)
    roots: set[int] = field(default_factory=set)

    @property
    def n_words(self) -> int:
        ids = [t.word_id for t in self.tokens if t.word_id is not None]
        return max(ids) + 1 if ids else 0

    def word_edge_set(self) -> set[tuple[int, int, str]]:
        return {(e.head, e.dependent, e.label) for e in self.word_edges}

    def words(self) -> list[str]:
        """Surface form of every word, continuation markers removed."""
        out: list[str] = []
        for positions in word_subword_map(self.tokens).values():
            out.append("".join(self.tokens[p].surface.removesuffix(CONTINUATION) for p in positions))
        return out

    def to_word_tree(self) -> WordTree:
        """Collapse to a word tree; every root word gets head 0 and label ``root``."""
        forms = self.words()
        heads = [0] * len(forms)
        labels = ["root"] * len(forms)
        for e in self.word_edges:
            heads[e.dependent] = e.head + 1
            labels[e.dependent] = e.label
        return WordTree(tuple(forms), tuple(heads), tuple(labels))


def segment(text: str | Sequence[str]) -> list[Token]:
    """Turn "@@ "-segmented text into subword tokens with word bookkeeping."""
    pieces = text.split() if isinstance(text, str) else list(text)
    tokens = []
    word = 0
    for i, piece in enumerate(pieces):
        final = not piece.endswith(CONTINUATION)
        tokens.append(Token(i, piece, TokenKind.SUBWORD, word, final))
        if final:
            word += 1
    return tokens


def word_subword_map(tokens: Sequence[Token]) -> dict[int, list[int]]:
    """Map each word id to the positions of its subwords.

    Word ids are recomputed from continuation markers, so the map is valid
    even for tokens whose ``word_id`` was never filled in.
    """
    out: dict[int, list[int]] = {}
    word = 0
    open_word = False
    for tok in tokens:
        if tok.kind is not TokenKind.SUBWORD:
            if open_word:
                raise ValueError(f"word interrupted by non-subword token at position {tok.id}")
            continue
        out.setdefault(word, []).append(tok.id)
        open_word = not tok.is_word_final
        if tok.is_word_final:
            word += 1
    if open_word:
        raise ValueError("sequence ends inside a word (trailing continuation subword)")
    return out


def _check_acyclic(heads: Sequence[int], start_line: int) -> None:
    n = len(heads)
    for i in range(n):
        seen = set()
        j = i
        while j >= 0:
            if j in seen:
                raise ConlluError(f"cyclic head reference in sentence starting at line {start_line}")
            seen.add(j)
            j = heads[j] - 1


def parse_conllu(text: str) -> list[WordTree]:
    """Read basic trees (ID, FORM, HEAD, DEPREL) from CoNLL-U text.

    Multiword-token ranges (``1-2``) and empty nodes (``1.1``) are skipped.
    """
    trees: list[WordTree] = []
    rows: list[tuple[str, int, str]] = []
    start = 1

    def flush():
        nonlocal rows
        if rows:
            forms, heads, labels = zip(*rows)
            for h in heads:
                if h > len(forms):
                    raise ConlluError(f"head {h} out of range in sentence starting at line {start}")
            _check_acyclic(heads, start)
            trees.append(WordTree(tuple(forms), tuple(heads), tuple(labels)))
        rows = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            flush()
            start = lineno + 1
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        try:
            idx = int(cols[0])
            head = int(cols[6])
        except ValueError:
            raise ConlluError(f"line {lineno}: non-integer ID or HEAD") from None
        if idx != len(rows) + 1:
            raise ConlluError(f"line {lineno}: expected word id {len(rows) + 1}, got {idx}")
        if head < 0:
            raise ConlluError(f"line {lineno}: negative head")
        if head == idx:
            raise ConlluError(f"cyclic head reference at line {lineno}")
        rows.append((cols[1], head, cols[7]))
    flush()
    return trees


def format_conllu(trees: Iterable[WordTree]) -> str:
    blocks = []
    for tree in trees:
        lines = [
            "\t".join([str(i + 1), form, "_", "_", "_", "_", str(head), label, "_", "_"])
            for i, (form, head, label) in enumerate(zip(tree.forms, tree.heads, tree.labels))
        ]
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def read_conllu(path: str | Path) -> list[WordTree]:
    return parse_conllu(Path(path).read_text(encoding="utf-8"))


def is_projective(tree: WordTree) -> bool:
    """True iff every word between a head and its dependent descends from the head."""
    n = len(tree)
    parent = [h - 1 for h in tree.heads]

    def descends(w: int, anc: int) -> bool:
        steps = 0
        while w >= 0 and steps <= n:
            if w == anc:
                return True
            w = parent[w]
            steps += 1
        return False

    for d, h in enumerate(parent):
        if h < 0:
            continue
        lo, hi = sorted((h, d))
        for w in range(lo + 1, hi):
            if not descends(w, h):
                return False
    return True
