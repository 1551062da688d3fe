import json
import math

import pytest
import torch

from treedec.checkpoint import load_tensors, read_manifest, save_tensors
from treedec.depgraph import UD_LABELS, WordTree, format_conllu
from treedec.model import Example, ModelConfig, build_model
from treedec.training import (
    DataError,
    NumericalError,
    Trainer,
    TrainConfig,
    batch_for_step,
    build_vocabularies,
    default_mode,
    encode_corpus,
    epoch_order,
    load_checkpoint,
    lr_at,
    prepare_corpus,
    prepare_pairs,
    restore_optimizer,
)
from treedec.transitions import Vocabulary, format_sequence

from conftest import EXAMPLE1_PIECES, EXAMPLE1_SEQUENCE, EXAMPLE1_TREE

CROSSING = WordTree(("a", "b", "c", "d"), (3, 4, 0, 3), ("dep", "dep", "root", "dep"))


def test_train_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.batch_size, c.lr, c.warmup_steps, c.beta1, c.beta2, c.eps) == (128, 1e-4, 4000, 0.9, 0.999, 1e-8)
    with pytest.raises(ValueError):
        TrainConfig(warmup_steps=10, total_steps=5)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


def test_prepare_pairs_filters_and_counts():
    long_tree = WordTree(tuple(f"w{i}" for i in range(41)), tuple([0] + [1] * 40), tuple(["root"] + ["dep"] * 40))
    sources = ["x y", "", "p q", "l"]
    targets = [" ".join(EXAMPLE1_PIECES), "", "a b c d", " ".join(long_tree.forms)]
    trees = [EXAMPLE1_TREE, WordTree((), (), ()), CROSSING, long_tree]
    out = prepare_pairs(sources, targets, trees)
    assert out.dropped == {"empty": 1, "non_projective": 1, "overlength": 1}
    assert len(out.pairs) == 1
    assert format_sequence(out.pairs[0].transitions) == EXAMPLE1_SEQUENCE


def test_prepare_pairs_errors():
    with pytest.raises(DataError):
        prepare_pairs(["a"], ["a", "b"], [EXAMPLE1_TREE])
    with pytest.raises(DataError):
        prepare_pairs(["a"], ["not the same words"], [EXAMPLE1_TREE])


def test_prepare_corpus_from_files(tmp_path):
    (tmp_path / "s").write_text("x y\n\nz\n")
    (tmp_path / "t").write_text(" ".join(EXAMPLE1_PIECES) + "\n\na b c d\n")
    (tmp_path / "c").write_text(format_conllu([EXAMPLE1_TREE, CROSSING]))
    out = prepare_corpus(tmp_path / "s", tmp_path / "t", tmp_path / "c")
    assert len(out.pairs) == 1 and out.dropped == {"empty": 1, "non_projective": 1}
    (tmp_path / "s").write_text("x y\n")
    with pytest.raises(DataError):
        prepare_corpus(tmp_path / "s", tmp_path / "t", tmp_path / "c")


def test_lr_schedule():
    c = TrainConfig(lr=1e-3, warmup_steps=100, total_steps=1000)
    assert lr_at(1, c) == pytest.approx(1e-5)
    assert lr_at(100, c) == pytest.approx(1e-3)
    assert lr_at(400, c) == pytest.approx(1e-3 * math.sqrt(100 / 400))
    peak = max(range(1, 1000), key=lambda s: lr_at(s, c))
    assert peak == 100


def test_shuffling_is_pure():
    assert epoch_order(10, 3, 1) == epoch_order(10, 3, 1)
    assert epoch_order(10, 3, 1) != epoch_order(10, 3, 2)
    assert sorted(epoch_order(10, 3, 0)) == list(range(10))
    assert batch_for_step(10, 4, 0, 3) == epoch_order(10, 0, 1)[:4]
    seen = sum((batch_for_step(10, 4, 0, s) for s in range(3)), [])
    assert sorted(seen) == list(range(10))


def test_default_mode():
    assert default_mode(ModelConfig(variant="vanilla")) == "causal"
    assert default_mode(ModelConfig(variant="parent")) == "exact"


def _tiny(variant="gcn", seed=0):
    pairs = prepare_pairs(["x y z", "y w"], [" ".join(EXAMPLE1_PIECES), "a b"],
                          [EXAMPLE1_TREE, WordTree(("a", "b"), (2, 0), ("det", "root"))])
    sv, tv = build_vocabularies(pairs, UD_LABELS)
    cfg = ModelConfig(variant=variant, d_model=16, n_heads=2, ffn_dim=32, n_enc_blocks=1, n_dec_blocks=1,
                      src_vocab_size=len(sv), tgt_vocab_size=len(tv))
    return encode_corpus(pairs, sv, tv, cfg), cfg, tv, sv


def test_causal_training_refused_for_bidirectional():
    data, cfg, tv, _ = _tiny("bitran")
    with pytest.raises(ValueError):
        Trainer(build_model(cfg, tv), TrainConfig(mode="causal", warmup_steps=1, total_steps=2))


def test_training_is_reproducible_and_resumable(tmp_path):
    data, cfg, tv, sv = _tiny("parent")
    tc = TrainConfig(batch_size=2, lr=1e-3, warmup_steps=5, total_steps=6, eval_every=3, seed=4)
    meta = {"vocab": tv.to_json(), "src_vocab": sv.to_json()}
    a = Trainer(build_model(cfg, tv, seed=4), tc, tmp_path / "a", meta)
    hist_a = a.fit(data, data)
    b = Trainer(build_model(cfg, tv, seed=4), tc)
    hist_b = b.fit(data)
    assert [h["train_loss"] for h in hist_a] == [h["train_loss"] for h in hist_b]
    # resume from the step-3 checkpoint and replay steps 4..6
    model, meta_loaded, adam = load_checkpoint(tmp_path / "a" / "3.ckpt")
    assert meta_loaded["step"] == 3
    c = Trainer(model, tc)
    restore_optimizer(c, adam, 3)
    ref = Trainer(build_model(cfg, tv, seed=4), tc)
    ref.fit(data, steps=3)
    for _ in range(3):
        batch = [data[i] for i in batch_for_step(len(data), 2, 4, ref.step)]
        assert c.train_step(batch) == ref.train_step(batch)
    logs = [json.loads(line) for line in (tmp_path / "a" / "metrics.jsonl").read_text().splitlines()]
    assert {"step", "train_loss", "lr", "wallclock"} <= set(logs[-1]) and "dev_loss" in logs[-1]
    assert (tmp_path / "a" / "best.ckpt").exists() and (tmp_path / "a" / "6.ckpt").exists()


def test_nan_loss_aborts_with_dump(tmp_path):
    data, cfg, tv, _ = _tiny("vanilla")
    model = build_model(cfg, tv)
    with torch.no_grad():
        model.tgt_embed.fill_(float("nan"))
    tr = Trainer(model, TrainConfig(batch_size=2, warmup_steps=1, total_steps=1), tmp_path)
    with pytest.raises(NumericalError):
        tr.fit(data)
    dumped = json.loads((tmp_path / "nan_batch_1.json").read_text())
    assert len(dumped) == 2 and "tgt" in dumped[0]


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    g = torch.Generator().manual_seed(0)
    tensors = {"a": torch.randn(3, 4, generator=g), "b/c": torch.randn(5, generator=g), "s": torch.tensor(2.5)}
    save_tensors(tmp_path / "x.ckpt", tensors, {"note": "hi"})
    loaded, meta = load_tensors(tmp_path / "x.ckpt")
    assert meta == {"note": "hi"}
    for k, v in tensors.items():
        assert torch.equal(loaded[k], v)
    assert read_manifest(tmp_path / "x.ckpt")["meta"] == {"note": "hi"}
    raw = (tmp_path / "x.ckpt").read_bytes()
    assert raw[:8] == b"TDCKPT01"
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_tensors(tmp_path / "bad")


def test_loaded_model_reproduces_logits(tmp_path):
    data, cfg, tv, sv = _tiny("gcn")
    tr = Trainer(build_model(cfg, tv), TrainConfig(batch_size=2, warmup_steps=1, total_steps=2, eval_every=2),
                 tmp_path, {"vocab": tv.to_json(), "src_vocab": sv.to_json()})
    tr.fit(data)
    model, meta, _ = load_checkpoint(tmp_path / "best.ckpt")
    vocab = Vocabulary.from_json(meta["vocab"])
    assert vocab.itos == tv.itos
    from treedec.model import teacher_forced_loss
    assert teacher_forced_loss(model, data).item() == teacher_forced_loss(tr.model, data).item()


def _copy_task(n: int = 50, seed: int = 0):
    import random
    rng = random.Random(seed)
    words = [f"t{i}" for i in range(8)]
    sents = [[rng.choice(words) for _ in range(rng.randint(2, 5))] for _ in range(n)]
    trees = [WordTree(tuple(s), tuple([0] + [1] * (len(s) - 1)), tuple(["root"] + ["dep"] * (len(s) - 1)))
             for s in sents]
    return prepare_pairs([" ".join(s) for s in sents], [" ".join(s) for s in sents], trees)


def _fit_copy(variant: str, steps: int, seed: int = 0):
    pairs = _copy_task()
    sv, tv = build_vocabularies(pairs, UD_LABELS)
    cfg = ModelConfig(variant=variant, d_model=32, n_heads=4, ffn_dim=64, n_enc_blocks=1, n_dec_blocks=1,
                      src_vocab_size=len(sv), tgt_vocab_size=len(tv))
    data = encode_corpus(pairs, sv, tv, cfg)
    tr = Trainer(build_model(cfg, tv, seed=seed),
                 TrainConfig(batch_size=20, lr=3e-3, warmup_steps=20, total_steps=steps, seed=seed, eval_every=steps))
    hist = tr.fit(data, data)
    return tr, hist, data, sv, tv


@pytest.mark.parametrize("variant", ["vanilla", "bitran", "linearized", "gcn", "parent"])
def test_loss_decreases_on_copy_task(variant):
    _, hist, *_ = _fit_copy(variant, 200)
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]


def test_trained_vanilla_copies_source_without_constraints():
    from treedec.decoding import translate
    tr, _, data, sv, tv = _fit_copy("vanilla", 400)
    for pair in _copy_task().pairs[:10]:
        out = translate(tr.model, sv.encode_tokens(pair.source), tv, beam=1, constrain=False)
        assert out.text == " ".join(pair.source)


def test_bitran_not_worse_than_vanilla_on_copy_task():
    _, hv, *_ = _fit_copy("vanilla", 150)
    _, hb, *_ = _fit_copy("bitran", 150)
    assert hb[-1]["dev_loss"] <= hv[-1]["dev_loss"] + 0.05
