import random

import pytest
from hypothesis import HealthCheck, settings

from treedec.depgraph import UD_LABELS, WordTree

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

EXAMPLE1_TREE = WordTree(
    ("John", "put", "the", "coals", "out"),
    (2, 0, 4, 2, 2),
    ("nsubj", "root", "det", "obj", "compound:prt"),
)
EXAMPLE1_PIECES = ["Jo@@", "hn", "put", "the", "coals", "out"]
EXAMPLE1_SEQUENCE = "Jo@@ hn put LA:nsubj the coals LA:det RA:obj out RA:compound:prt"


def random_projective_tree(rng: random.Random, n: int, labels=UD_LABELS) -> WordTree:
    """Grow a projective tree top-down: each head owns a contiguous span."""
    heads = [0] * n

    def build(lo: int, hi: int, parent: int) -> None:
        h = rng.randrange(lo, hi)
        heads[h] = parent
        for a, b in _split(lo, h) + _split(h + 1, hi):
            build(a, b, h + 1)

    def _split(lo: int, hi: int) -> list[tuple[int, int]]:
        spans, start = [], lo
        for cut in range(lo + 1, hi):
            if rng.random() < 0.5:
                spans.append((start, cut))
                start = cut
        if start < hi:
            spans.append((start, hi))
        return spans

    build(0, n, 0)
    labs = tuple("root" if h == 0 else rng.choice([lab for lab in labels if lab != "root"]) for h in heads)
    forms = tuple(f"w{i}" for i in range(n))
    return WordTree(forms, tuple(heads), labs)


def random_segmentation(rng: random.Random, tree: WordTree, max_pieces: int = 3) -> list[str]:
    pieces = []
    for form in tree.forms:
        k = rng.randint(1, max_pieces)
        parts = [f"{form}p{j}" for j in range(k)]
        pieces.extend(p + "@@" for p in parts[:-1])
        pieces.append(parts[-1])
    return pieces


def merged_forms(pieces: list[str]) -> tuple[str, ...]:
    return tuple(" ".join(pieces).replace("@@ ", "").split())


def crossing_free(tree: WordTree) -> bool:
    """Brute-force check: no two arcs (root arc included) cross."""
    arcs = [tuple(sorted((h, d + 1))) for d, h in enumerate(tree.heads)]
    for a, b in arcs:
        for c, d in arcs:
            if a < c < b < d:
                return False
    return True


@pytest.fixture
def rng():
    return random.Random(1234)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion."""
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
