"""Corpus BLEU and chrF+ on detokenized, whitespace-separated text."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

BLEU_ORDER = 4
CHAR_ORDER = 6
WORD_ORDER = 1
CHRF_BETA = 3.0


def _ngrams(items: Sequence[str], n: int) -> Counter:
    return Counter(tuple(items[i:i + n]) for i in range(len(items) - n + 1))


def _check(hyps: Sequence[str], refs: Sequence[str]) -> None:
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")
    if not hyps:
        raise ValueError("empty corpus")


@dataclass
class BleuStats:
    matches: list[int] = field(default_factory=lambda: [0] * BLEU_ORDER)
    totals: list[int] = field(default_factory=lambda: [0] * BLEU_ORDER)
    ref_totals: list[int] = field(default_factory=lambda: [0] * BLEU_ORDER)
    hyp_len: int = 0
    ref_len: int = 0

    def __iadd__(self, other: "BleuStats") -> "BleuStats":
        self.matches = [a + b for a, b in zip(self.matches, other.matches)]
        self.totals = [a + b for a, b in zip(self.totals, other.totals)]
        self.ref_totals = [a + b for a, b in zip(self.ref_totals, other.ref_totals)]
        self.hyp_len += other.hyp_len
        self.ref_len += other.ref_len
        return self


def bleu_stats(hyp: str, ref: str) -> BleuStats:
    h, r = hyp.split(), ref.split()
    st = BleuStats(hyp_len=len(h), ref_len=len(r))
    for n in range(1, BLEU_ORDER + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        st.matches[n - 1] = sum((hc & rc).values())
        st.totals[n - 1] = max(0, len(h) - n + 1)
        st.ref_totals[n - 1] = max(0, len(r) - n + 1)
    return st


def bleu_from_stats(st: BleuStats, smooth: bool = False) -> float:
    """Geometric mean of n-gram precisions times the brevity penalty.

    An order with no n-grams on either side (every sentence too short) is
    left out of the mean instead of zeroing the score.
    """
    log_p = 0.0
    used = 0
    for n in range(BLEU_ORDER):
        m, t = st.matches[n], st.totals[n]
        if t == 0 and st.ref_totals[n] == 0:
            continue
        if smooth and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t)
        used += 1
    if used == 0:
        return 0.0
    bp = 1.0 if st.hyp_len >= st.ref_len else math.exp(1 - st.ref_len / st.hyp_len)
    return 100.0 * bp * math.exp(log_p / used)


def bleu(hyps: Sequence[str], refs: Sequence[str]) -> float:
    """Corpus BLEU-4 from pooled n-gram counts, no smoothing."""
    _check(hyps, refs)
    total = BleuStats()
    for h, r in zip(hyps, refs):
        total += bleu_stats(h, r)
    return bleu_from_stats(total)


def sentence_bleu(hyp: str, ref: str) -> float:
    """Add-one smoothed BLEU for orders 2-4; diagnostics only."""
    return bleu_from_stats(bleu_stats(hyp, ref), smooth=True)


def chrf_stats(hyp: str, ref: str, char_order: int = CHAR_ORDER, word_order: int = WORD_ORDER) -> list[tuple[int, int, int]]:
    """(hyp count, ref count, matches) for char orders 1..6 then word orders."""
    hc, rc = "".join(hyp.split()), "".join(ref.split())
    out = []
    for n in range(1, char_order + 1):
        a, b = _ngrams(list(hc), n), _ngrams(list(rc), n)
        out.append((sum(a.values()), sum(b.values()), sum((a & b).values())))
    hw, rw = hyp.split(), ref.split()
    for n in range(1, word_order + 1):
        a, b = _ngrams(hw, n), _ngrams(rw, n)
        out.append((sum(a.values()), sum(b.values()), sum((a & b).values())))
    return out


def chrf_from_stats(stats: Sequence[tuple[int, int, int]], beta: float = CHRF_BETA) -> float:
    """Average precision and recall over orders, then F-beta.

    Orders absent from both sides are skipped; an order present on only one
    side contributes zero to the other side's average.
    """
    prec = rec = 0.0
    used = 0
    for h, r, m in stats:
        if h == 0 and r == 0:
            continue
        used += 1
        prec += m / h if h else 0.0
        rec += m / r if r else 0.0
    if used == 0:
        return 0.0
    prec, rec = prec / used, rec / used
    if prec + rec == 0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * prec * rec / (b2 * prec + rec)


def chrf_plus(hyps: Sequence[str], refs: Sequence[str], beta: float = CHRF_BETA) -> float:
    """Corpus chrF+ (character 6-grams, word unigrams, beta 3)."""
    _check(hyps, refs)
    total: list[list[int]] | None = None
    for h, r in zip(hyps, refs):
        st = chrf_stats(h, r)
        if total is None:
            total = [list(x) for x in st]
        else:
            for acc, x in zip(total, st):
                for i in range(3):
                    acc[i] += x[i]
    return chrf_from_stats([tuple(x) for x in total], beta)


def sentence_chrf(hyp: str, ref: str, beta: float = CHRF_BETA) -> float:
    return chrf_from_stats(chrf_stats(hyp, ref), beta)


@dataclass
class ScoreReport:
    bleu: float
    chrf_plus: float
    per_sentence: list[dict]
    ngram_stats: dict


def score(hyps: Sequence[str], refs: Sequence[str]) -> ScoreReport:
    _check(hyps, refs)
    total = BleuStats()
    per = []
    for i, (h, r) in enumerate(zip(hyps, refs)):
        st = bleu_stats(h, r)
        total += st
        per.append({"index": i, "bleu": sentence_bleu(h, r), "chrf_plus": sentence_chrf(h, r)})
    return ScoreReport(
        bleu=bleu_from_stats(total),
        chrf_plus=chrf_plus(hyps, refs),
        per_sentence=per,
        ngram_stats={"matches": total.matches, "totals": total.totals, "ref_totals": total.ref_totals,
                     "hyp_len": total.hyp_len, "ref_len": total.ref_len},
    )
