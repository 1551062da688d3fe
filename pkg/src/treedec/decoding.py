"""Beam search over the joint token/transition vocabulary."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from . import layers
from .depgraph import CONTINUATION, DepGraph, Token, TokenKind
from .model import DecoderState, TreeDecoderModel
from .transitions import SPECIALS, StackState, Vocabulary, step, valid_mask


@dataclass
class Hypothesis:
    state: DecoderState
    log_prob: float = 0.0
    finished: bool = False


@dataclass
class Translation:
    tokens: list[str]
    graph: DepGraph
    log_prob: float
    finished: bool

    @property
    def text(self) -> str:
        return strip_transitions(self.tokens)


def strip_transitions(tokens: Sequence[str] | Sequence[Token] | str) -> str:
    """Surface text: arcs and control tokens removed, "@@ " joins undone."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    pieces = []
    for tok in tokens:
        if isinstance(tok, Token):
            if tok.kind is not TokenKind.SUBWORD:
                continue
            tok = tok.surface
        if tok.startswith(("LA:", "RA:")) or tok in SPECIALS:
            continue
        pieces.append(tok)
    return " ".join(pieces).replace(CONTINUATION + " ", "").removesuffix(CONTINUATION).strip()


def step_budget(max_subwords: int) -> int:
    # subwords, at most one arc per word but the root, and EOS
    return 2 * max_subwords + 1


def _allowed(state: StackState, vocab: Vocabulary, model: TreeDecoderModel, constrain: bool, strict: bool) -> np.ndarray:
    cfg = model.config
    if constrain:
        return valid_mask(state, vocab, strict=strict, max_subwords=cfg.max_target_subwords,
                          allow_arcs=cfg.uses_transitions)
    mask = np.ones(len(vocab), dtype=bool)
    mask[[vocab.pad, vocab.bos, vocab.unk]] = False
    if not cfg.uses_transitions:
        mask &= ~vocab.is_arc
    return mask


def _advance(state: DecoderState, token: int, vocab: Vocabulary) -> DecoderState:
    return DecoderState(state.ids + (token,), step(state.stack, vocab.decode(token)))


def _result(h: Hypothesis, vocab: Vocabulary) -> Translation:
    ids = list(h.state.ids)
    if ids and ids[-1] == vocab.eos:
        ids = ids[:-1]
    stack = h.state.stack
    return Translation([vocab.itos[i] for i in ids], stack.graph(), h.log_prob, h.finished)


@torch.no_grad()
def translate(
    model: TreeDecoderModel,
    source: Sequence[int],
    vocab: Vocabulary,
    beam: int = 4,
    constrain: bool = True,
    strict: bool = False,
    length_norm: bool = False,
) -> Translation:
    """Decode one source sentence (ids) into tokens and the generated graph.

    Without constraints an illegal transition ends the hypothesis as
    unfinished rather than raising.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    model.eval()
    src = torch.tensor([list(source)], dtype=torch.long)
    memory, memory_mask = model.encode(src)
    alive = [Hypothesis(DecoderState())]
    finished: list[Hypothesis] = []
    broken: list[Hypothesis] = []
    budget = step_budget(model.config.max_target_subwords)

    def score(h: Hypothesis) -> float:
        if not length_norm:
            return h.log_prob
        return h.log_prob / max(1, len(h.state.ids))

    for _ in range(budget):
        if not alive:
            break
        logits = model.decode_step([h.state for h in alive], memory, memory_mask)
        logp = layers.log_softmax(logits.double()).numpy()
        for r, h in enumerate(alive):
            allowed = _allowed(h.state.stack, vocab, model, constrain, strict)
            logp[r, ~allowed] = -np.inf
        total = logp + np.array([h.log_prob for h in alive])[:, None]
        flat = total.ravel()
        k = min(beam, int(np.isfinite(flat).sum()))
        if k == 0:
            break
        # stable ordering: highest score first, ties broken by lowest flat index
        order = np.lexsort((np.arange(flat.size), -flat))[:k]
        nxt = []
        for idx in order:
            r, tok = divmod(int(idx), logp.shape[1])
            parent = alive[r]
            try:
                state = _advance(parent.state, tok, vocab)
            except ValueError:
                if constrain:
                    raise
                broken.append(Hypothesis(parent.state, float(flat[idx]), False))
                continue
            hyp = Hypothesis(state, float(flat[idx]), tok == vocab.eos)
            (finished if hyp.finished else nxt).append(hyp)
        alive = nxt
        if len(finished) >= beam:
            break
        if finished and not length_norm and alive:
            best_done = max(h.log_prob for h in finished)
            if max(h.log_prob for h in alive) < best_done:
                break

    if finished:
        best = max(finished, key=score)
        return _result(best, vocab)
    pool = alive or broken or [Hypothesis(DecoderState())]
    warnings.warn("no hypothesis finished within the length budget")
    return _result(max(pool, key=score), vocab)


@torch.no_grad()
def greedy_batch(
    model: TreeDecoderModel,
    sources: Sequence[Sequence[int]],
    vocab: Vocabulary,
    constrain: bool = True,
    strict: bool = False,
) -> list[Translation]:
    """Argmax decoding of many sources at once; same path as ``translate(beam=1)``."""
    model.eval()
    n = len(sources)
    S = max(len(s) for s in sources)
    src = torch.zeros(n, S, dtype=torch.long)
    pad = torch.ones(n, S, dtype=torch.bool)
    for i, s in enumerate(sources):
        src[i, : len(s)] = torch.tensor(list(s))
        pad[i, : len(s)] = False
    memory, memory_mask = model.encode(src, pad)
    hyps = [Hypothesis(DecoderState()) for _ in range(n)]
    active = list(range(n))
    for _ in range(step_budget(model.config.max_target_subwords)):
        if not active:
            break
        idx = torch.tensor(active)
        logits = model.decode_step([hyps[i].state for i in active], memory[idx],
                                   None if memory_mask is None else memory_mask[idx])
        logp = layers.log_softmax(logits.double()).numpy()
        still = []
        for r, i in enumerate(active):
            h = hyps[i]
            allowed = _allowed(h.state.stack, vocab, model, constrain, strict)
            row = np.where(allowed, logp[r], -np.inf)
            tok = int(np.argmax(row))
            if not np.isfinite(row[tok]):
                continue
            try:
                state = _advance(h.state, tok, vocab)
            except ValueError:
                if constrain:
                    raise
                continue
            hyps[i] = Hypothesis(state, h.log_prob + float(row[tok]), tok == vocab.eos)
            if not hyps[i].finished:
                still.append(i)
        active = still
    return [_result(h, vocab) for h in hyps]
