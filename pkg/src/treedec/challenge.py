"""End-to-end syntactic generalisation experiment on synthetic data.

synth -> train each variant for each seed -> greedy translate -> BLEU/chrF+
and slot accuracy on two held-out challenge sets -> paired sign tests.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from scipy.stats import binomtest

from . import metrics
from .decoding import greedy_batch
from .depgraph import UD_LABELS
from .model import ModelConfig, build_model
from .synthlang import Corpus, GrammarSpec, Segmenter, generate, make_segmenter, mixup_pairs, slot_correct, swap_test
from .training import Trainer, TrainConfig, build_vocabularies, encode_corpus, prepare_pairs

log = logging.getLogger(__name__)


@dataclass
class ChallengeConfig:
    variants: tuple = ("vanilla", "gcn", "parent")
    seeds: tuple = (0, 1, 2)
    train_size: int = 5000
    dev_size: int = 200
    test_size: int = 500
    max_intervener: int = 4
    data_seed: int = 1
    test_seed: int = 7919
    steps: int = 600
    batch_size: int = 64
    lr: float = 1e-3
    warmup_steps: int = 200
    d_model: int = 64
    n_blocks: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    baseline: str = "vanilla"

    @classmethod
    def from_dict(cls, obj: dict) -> "ChallengeConfig":
        known = set(cls.__dataclass_fields__)
        out = {k: v for k, v in obj.items() if k in known}
        for k in ("variants", "seeds"):
            if k in out:
                out[k] = tuple(out[k])
        return cls(**out)


@dataclass
class TestSet:
    name: str
    sources: list[str]
    references: list[str]
    slots: list[dict]
    subsets: list[str]


@dataclass
class ChallengeData:
    train: Corpus
    dev: Corpus
    tests: list[TestSet] = field(default_factory=list)


def _source_key(pair) -> str:
    return " ".join(pair.source_words())


def build_data(cfg: ChallengeConfig) -> ChallengeData:
    """Held-out sets first, then training data that never contains their sources."""
    base = GrammarSpec(max_intervener=cfg.max_intervener)
    seg = make_segmenter(base)

    swaps = swap_test(mixup_pairs(base.lexicon))
    swap_pairs = [p for pair in swaps for p in pair]
    swap = TestSet(
        "swap",
        [" ".join(seg(p.source_words())) for p in swap_pairs],
        [" ".join(orig.target_tree().forms) for orig, _ in swaps for _ in range(2)],
        [orig.slots() for orig, _ in swaps for _ in range(2)],
        [f"swap-{orig.case}" for orig, _ in swaps for _ in range(2)],
    )

    # long-distance particle test: interveners >= 2, different seed
    pool = generate(GrammarSpec(templates={"particle": 1.0}, max_intervener=cfg.max_intervener,
                                size=cfg.test_size * 4, seed=cfg.test_seed))
    long = [p for p in pool.pairs if p.intervener >= 2][: cfg.test_size]
    if len(long) < cfg.test_size:
        raise ValueError("could not draw enough long-distance particle sentences")
    particle = TestSet(
        "particle",
        [" ".join(seg(p.source_words())) for p in long],
        [" ".join(p.target_tree().forms) for p in long],
        [p.slots() for p in long],
        [f"particle-m{p.intervener}" for p in long],
    )

    held_out = frozenset(_source_key(p) for p in swap_pairs + long)
    full = generate(GrammarSpec(max_intervener=cfg.max_intervener, size=cfg.train_size + cfg.dev_size,
                                seed=cfg.data_seed, exclude=held_out))
    train = Corpus(full.pairs[: cfg.train_size], full.segmenter)
    dev = Corpus(full.pairs[cfg.train_size:], full.segmenter)
    return ChallengeData(train, dev, [swap, particle])


@dataclass
class RunResult:
    variant: str
    seed: int
    train_seconds: float
    final_loss: float
    dev_loss: float | None
    scores: dict
    correct: dict  # test name -> per-sentence 0/1


def _model_config(cfg: ChallengeConfig, variant: str, n_src: int, n_tgt: int) -> ModelConfig:
    return ModelConfig(variant=variant, d_model=cfg.d_model, n_enc_blocks=cfg.n_blocks, n_dec_blocks=cfg.n_blocks,
                       n_heads=cfg.n_heads, ffn_dim=cfg.ffn_dim, src_vocab_size=n_src, tgt_vocab_size=n_tgt)


def run_variant(cfg: ChallengeConfig, data: ChallengeData, variant: str, seed: int,
                run_dir: Path | None = None) -> RunResult:
    prepared = prepare_pairs(data.train.sources(), data.train.targets(), data.train.trees())
    dev_prepared = prepare_pairs(data.dev.sources(), data.dev.targets(), data.dev.trees())
    src_vocab, vocab = build_vocabularies(prepared, UD_LABELS)
    mcfg = _model_config(cfg, variant, len(src_vocab), len(vocab))
    train = encode_corpus(prepared, src_vocab, vocab, mcfg)
    dev = encode_corpus(dev_prepared, src_vocab, vocab, mcfg)
    tcfg = TrainConfig(batch_size=cfg.batch_size, lr=cfg.lr, warmup_steps=cfg.warmup_steps,
                       total_steps=cfg.steps, seed=seed, eval_every=cfg.steps)
    model = build_model(mcfg, vocab, seed=seed)
    trainer = Trainer(model, tcfg, run_dir, {"vocab": vocab.to_json(), "src_vocab": src_vocab.to_json()})
    start = time.time()
    history = trainer.fit(train, dev)
    seconds = time.time() - start

    scores, correct = {}, {}
    for test in data.tests:
        ids = [src_vocab.encode_tokens(s.split()) for s in test.sources]
        hyps = [t.text for t in greedy_batch(model, ids, vocab)]
        ok = [int(slot_correct(h, s)) for h, s in zip(hyps, test.slots)]
        correct[test.name] = ok
        scores[test.name] = {
            "slot_accuracy": sum(ok) / len(ok),
            "bleu": metrics.bleu(hyps, test.references),
            "chrf_plus": metrics.chrf_plus(hyps, test.references),
        }
        if run_dir is not None:
            (run_dir / f"{test.name}.hyp.txt").write_text("\n".join(hyps) + "\n", encoding="utf-8")
    log.info("%s seed %d: %s (%.0fs)", variant, seed, scores, seconds)
    return RunResult(variant, seed, seconds, history[-1]["train_loss"], history[-1].get("dev_loss"), scores, correct)


def sign_test(wins: int, losses: int) -> float:
    """Two-sided sign test p-value; ties are dropped before calling."""
    if wins + losses == 0:
        return 1.0
    return float(binomtest(wins, wins + losses, 0.5).pvalue)


def compare(results: Sequence[RunResult], data: ChallengeData, variant: str, baseline: str) -> dict:
    """Paired comparison of ``variant`` against ``baseline`` across subsets and seeds.

    Sentence level: discordant sentence pairs, pooled over seeds and subsets.
    Subset level: one trial per (subset, seed) cell, won by the higher accuracy.
    """
    by = {(r.variant, r.seed): r for r in results}
    seeds = sorted({r.seed for r in results if r.variant == variant} & {r.seed for r in results if r.variant == baseline})
    sent_w = sent_l = cell_w = cell_l = 0
    cells = []
    for test in data.tests:
        for subset in sorted(set(test.subsets)):
            idx = [i for i, s in enumerate(test.subsets) if s == subset]
            for seed in seeds:
                a = by[(variant, seed)].correct[test.name]
                b = by[(baseline, seed)].correct[test.name]
                w = sum(a[i] > b[i] for i in idx)
                l = sum(a[i] < b[i] for i in idx)
                sent_w, sent_l = sent_w + w, sent_l + l
                acc_a = sum(a[i] for i in idx) / len(idx)
                acc_b = sum(b[i] for i in idx) / len(idx)
                cell_w += acc_a > acc_b
                cell_l += acc_a < acc_b
                cells.append({"subset": subset, "seed": seed, variant: acc_a, baseline: acc_b})
    return {
        "variant": variant,
        "baseline": baseline,
        "sentence_wins": sent_w,
        "sentence_losses": sent_l,
        "sentence_p": sign_test(sent_w, sent_l),
        "subset_wins": cell_w,
        "subset_losses": cell_l,
        "subset_p": sign_test(cell_w, cell_l),
        "cells": cells,
    }


def summarize(results: Sequence[RunResult], data: ChallengeData, cfg: ChallengeConfig) -> dict:
    means: dict = {}
    for variant in cfg.variants:
        runs = [r for r in results if r.variant == variant]
        if not runs:
            continue
        means[variant] = {
            test.name: {k: sum(r.scores[test.name][k] for r in runs) / len(runs)
                        for k in ("slot_accuracy", "bleu", "chrf_plus")}
            for test in data.tests
        }
    base = cfg.baseline
    directional = {}
    for variant in cfg.variants:
        if variant == base or variant not in means or base not in means:
            continue
        directional[variant] = {
            test.name: means[variant][test.name]["slot_accuracy"] >= means[base][test.name]["slot_accuracy"]
            for test in data.tests
        }
    comparisons = [compare(results, data, v, base) for v in cfg.variants if v != base and v in means]
    return {"means": means, "at_least_baseline": directional, "sign_tests": comparisons}


def run_challenge(cfg: ChallengeConfig, out_dir: str | Path | None = None) -> dict:
    out = Path(out_dir) if out_dir else None
    data = build_data(cfg)
    if out is not None:
        data.train.write(out / "data", "train.")
        data.dev.write(out / "data", "dev.")
    results = []
    for seed in cfg.seeds:
        for variant in cfg.variants:
            run_dir = out / f"{variant}-s{seed}" if out is not None else None
            results.append(run_variant(cfg, data, variant, seed, run_dir))
    report = {
        "config": asdict(cfg),
        "runs": [{k: v for k, v in asdict(r).items() if k != "correct"} for r in results],
        **summarize(results, data, cfg),
    }
    if out is not None:
        (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def format_report(report: dict) -> str:
    lines = []
    for variant, tests in report["means"].items():
        parts = [f"{name}: slot {s['slot_accuracy']:.3f} bleu {s['bleu']:.2f} chrF+ {s['chrf_plus']:.2f}"
                 for name, s in tests.items()]
        lines.append(f"{variant:<13} " + " | ".join(parts))
    for c in report["sign_tests"]:
        lines.append(
            f"{c['variant']} vs {c['baseline']}: sentences +{c['sentence_wins']}/-{c['sentence_losses']} "
            f"p={c['sentence_p']:.3g}; subsets +{c['subset_wins']}/-{c['subset_losses']} p={c['subset_p']:.3g}")
    return "\n".join(lines)
