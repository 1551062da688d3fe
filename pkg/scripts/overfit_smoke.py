"""Overfit every variant on two sentences and report steps to loss < 0.1."""
import time

from treedec.depgraph import UD_LABELS, WordTree
from treedec.model import VARIANTS, ModelConfig, build_model
from treedec.training import Trainer, TrainConfig, build_vocabularies, encode_corpus, prepare_pairs

SOURCES = ["Hans löscht die Kohlen", "das Kind schläft"]
TARGETS = ["Jo@@ hn put the coals out", "the child sle@@ eps"]
TREES = [
    WordTree(("John", "put", "the", "coals", "out"), (2, 0, 4, 2, 2), ("nsubj", "root", "det", "obj", "compound:prt")),
    WordTree(("the", "child", "sleeps"), (2, 3, 0), ("det", "nsubj", "root")),
]


def main(max_steps: int = 500) -> None:
    pairs = prepare_pairs(SOURCES, TARGETS, TREES)
    src_vocab, vocab = build_vocabularies(pairs, UD_LABELS)
    for variant in VARIANTS:
        cfg = ModelConfig(variant=variant, d_model=32, n_heads=4, ffn_dim=64, n_enc_blocks=1, n_dec_blocks=2,
                          src_vocab_size=len(src_vocab), tgt_vocab_size=len(vocab))
        data = encode_corpus(pairs, src_vocab, vocab, cfg)
        trainer = Trainer(build_model(cfg, vocab, seed=11),
                          TrainConfig(batch_size=2, lr=1e-3, warmup_steps=50, total_steps=max_steps, seed=11))
        start = time.time()
        loss = float("inf")
        while trainer.step < max_steps and loss >= 0.1:
            loss = trainer.train_step(data)
        print(f"{variant:<13} step {trainer.step:>3} loss {loss:.4f} ({time.time() - start:.1f}s)")


if __name__ == "__main__":
    main()
