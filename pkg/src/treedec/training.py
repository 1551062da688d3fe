"""Corpus preparation and the optimisation loop."""
from __future__ import annotations

import json
import logging
import math
import random
import shutil
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import torch

from . import checkpoint
from .depgraph import CONTINUATION, WordTree, is_projective, read_conllu
from .model import Example, ModelConfig, TreeDecoderModel, build_model, encode_example, token_losses
from .transitions import SourceVocabulary, Transition, Vocabulary, oracle

log = logging.getLogger(__name__)

MAX_TARGET_SUBWORDS = 40


class DataError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr: float = 1e-4
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    total_steps: int = 90000
    seed: int = 0
    eval_every: int = 500
    mode: str | None = None  # exact / causal; None picks per variant
    log_every: int = 50

    def __post_init__(self):
        for name in ("batch_size", "lr", "warmup_steps", "total_steps", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps must not exceed total_steps")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class PreparedPair:
    source: list[str]
    transitions: list[Transition]


@dataclass
class PreparedCorpus:
    pairs: list[PreparedPair]
    dropped: Counter = field(default_factory=Counter)


def _read_lines(path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def prepare_pairs(
    sources: Sequence[str],
    targets: Sequence[str],
    trees: Sequence[WordTree],
    max_target_subwords: int = MAX_TARGET_SUBWORDS,
) -> PreparedCorpus:
    """Filter and convert aligned (source, segmented target, target tree) triples.

    Pairs are dropped when either side is empty, the tree is not projective,
    or the target has more than ``max_target_subwords`` subwords.
    """
    if not (len(sources) == len(targets) == len(trees)):
        raise DataError(f"line counts differ: {len(sources)} sources, {len(targets)} targets, {len(trees)} trees")
    out = PreparedCorpus([])
    for i, (src, tgt, tree) in enumerate(zip(sources, targets, trees)):
        src_toks, tgt_toks = src.split(), tgt.split()
        if not src_toks or not tgt_toks or len(tree) == 0:
            out.dropped["empty"] += 1
            continue
        merged = " ".join(tgt_toks).replace(CONTINUATION + " ", "").split()
        if merged != list(tree.forms):
            raise DataError(f"pair {i}: segmented target does not match the tree's word forms")
        if not is_projective(tree):
            out.dropped["non_projective"] += 1
            continue
        if len(tgt_toks) > max_target_subwords:
            out.dropped["overlength"] += 1
            continue
        out.pairs.append(PreparedPair(src_toks, oracle(tree, tgt_toks)))
    return out


def prepare_corpus(src_path, tgt_path, conllu_path, max_target_subwords: int = MAX_TARGET_SUBWORDS) -> PreparedCorpus:
    sources, targets = _read_lines(src_path), _read_lines(tgt_path)
    trees = read_conllu(conllu_path)
    if len(sources) != len(targets):
        raise DataError(f"{src_path} has {len(sources)} lines, {tgt_path} has {len(targets)}")
    # empty lines have no CoNLL-U block; re-align by skipping them
    aligned: list[WordTree] = []
    it = iter(trees)
    for tgt in targets:
        aligned.append(WordTree((), (), ()) if not tgt.split() else next(it, WordTree((), (), ())))
    if next(it, None) is not None:
        raise DataError("more CoNLL-U sentences than non-empty target lines")
    return prepare_pairs(sources, targets, aligned, max_target_subwords)


def build_vocabularies(corpus: PreparedCorpus, labels: Sequence[str]) -> tuple[SourceVocabulary, Vocabulary]:
    src = SourceVocabulary(t for p in corpus.pairs for t in p.source)
    tgt = Vocabulary((x.surface for p in corpus.pairs for x in p.transitions if x.kind == "subword"), labels)
    return src, tgt


def encode_corpus(corpus: PreparedCorpus, src_vocab: SourceVocabulary, vocab: Vocabulary,
                  config: ModelConfig) -> list[Example]:
    return [encode_example(src_vocab.encode_tokens(p.source), p.transitions, vocab, config) for p in corpus.pairs]


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``cfg.lr`` over ``warmup_steps``, then inverse square-root decay."""
    step = max(step, 1)
    return cfg.lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


def epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    order = list(range(n))
    random.Random(f"{seed}:{epoch}").shuffle(order)
    return order


def batch_for_step(n: int, batch_size: int, seed: int, step: int) -> list[int]:
    """Indices of the batch used at (0-based) ``step``; a pure function of its arguments."""
    per_epoch = max(1, math.ceil(n / batch_size))
    epoch, k = divmod(step, per_epoch)
    order = epoch_order(n, seed, epoch)
    return order[k * batch_size:(k + 1) * batch_size]


def default_mode(config: ModelConfig) -> str:
    return "exact" if config.bidirectional else "causal"


def batch_loss(model: TreeDecoderModel, batch: Sequence[Example], mode: str) -> tuple[torch.Tensor, int]:
    """Summed loss over the batch (sentences reduced in order) and its token count."""
    per = token_losses(model, batch, mode)
    total = per[0].sum()
    for t in per[1:]:
        total = total + t.sum()
    return total, sum(len(e.tgt) for e in batch)


@torch.no_grad()
def evaluate(model: TreeDecoderModel, data: Sequence[Example], mode: str, batch_size: int = 64) -> float:
    model.eval()
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        loss, n = batch_loss(model, data[i:i + batch_size], mode)
        total += float(loss)
        count += n
    return total / max(count, 1)


class Trainer:
    """Adam with warmup/inverse-sqrt decay; checkpoints to ``run_dir/<step>.ckpt``."""

    def __init__(self, model: TreeDecoderModel, cfg: TrainConfig, run_dir: str | Path | None = None,
                 meta: dict | None = None):
        self.model = model
        self.cfg = cfg
        self.mode = cfg.mode or default_mode(model.config)
        if self.mode == "causal" and model.config.bidirectional:
            raise ValueError(f"causal training leaks future tokens for variant {model.config.variant}")
        self.optim = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)
        self.step = 0
        self.best_dev = math.inf
        self.run_dir = Path(run_dir) if run_dir else None
        self.meta = meta or {}
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    def train_step(self, batch: Sequence[Example]) -> float:
        self.model.train()
        torch.manual_seed(self.cfg.seed * 1_000_003 + self.step)
        lr = lr_at(self.step + 1, self.cfg)
        for g in self.optim.param_groups:
            g["lr"] = lr
        self.optim.zero_grad(set_to_none=True)
        loss, n_tokens = batch_loss(self.model, batch, self.mode)
        mean = loss / n_tokens
        if not torch.isfinite(mean):
            self._dump(batch)
            raise NumericalError(f"non-finite loss at step {self.step + 1}")
        mean.backward()
        self.optim.step()
        self.step += 1
        return mean.item()

    def _dump(self, batch: Sequence[Example]) -> None:
        if self.run_dir is None:
            return
        with open(self.run_dir / f"nan_batch_{self.step + 1}.json", "w") as f:
            json.dump([asdict(e) for e in batch], f)

    def fit(self, train: Sequence[Example], dev: Sequence[Example] | None = None, steps: int | None = None) -> list[dict]:
        if not train:
            raise ValueError("empty training set")
        history = []
        target = self.cfg.total_steps if steps is None else self.step + steps
        log_file = open(self.run_dir / "metrics.jsonl", "a") if self.run_dir else None
        start = time.time()
        window: list[float] = []
        try:
            while self.step < target:
                idx = batch_for_step(len(train), self.cfg.batch_size, self.cfg.seed, self.step)
                window.append(self.train_step([train[i] for i in idx]))
                at_eval = self.step % self.cfg.eval_every == 0 or self.step == target
                if self.step % self.cfg.log_every == 0 or at_eval:
                    rec = {"step": self.step, "train_loss": sum(window) / len(window),
                           "lr": lr_at(self.step, self.cfg), "wallclock": round(time.time() - start, 3)}
                    window = []
                    if at_eval and dev:
                        rec["dev_loss"] = evaluate(self.model, dev, self.mode)
                    if at_eval:
                        self._checkpoint(rec.get("dev_loss"))
                    history.append(rec)
                    log.info("step %d loss %.4f", self.step, rec["train_loss"])
                    if log_file:
                        log_file.write(json.dumps(rec) + "\n")
                        log_file.flush()
        finally:
            if log_file:
                log_file.close()
        return history

    def _checkpoint(self, dev_loss: float | None) -> None:
        if self.run_dir is None:
            return
        path = self.run_dir / f"{self.step}.ckpt"
        save_checkpoint(path, self.model, self.optim, self.step, self.meta)
        score = dev_loss if dev_loss is not None else -self.step
        if score <= self.best_dev:
            self.best_dev = score
            shutil.copyfile(path, self.run_dir / "best.ckpt")


def save_checkpoint(path, model: TreeDecoderModel, optim: torch.optim.Optimizer | None, step: int,
                    meta: dict | None = None) -> None:
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    if optim is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optim.param_groups:
            for p in group["params"]:
                st = optim.state.get(p)
                if not st:
                    continue
                name = names[id(p)]
                tensors[f"adam/{name}/exp_avg"] = st["exp_avg"]
                tensors[f"adam/{name}/exp_avg_sq"] = st["exp_avg_sq"]
                tensors[f"adam/{name}/step"] = torch.as_tensor(st["step"], dtype=torch.float32).reshape(1)
    info = {"step": step, "config": json.loads(model.config.to_json()), **(meta or {})}
    checkpoint.save_tensors(path, tensors, info)


def load_checkpoint(path, vocab: Vocabulary | None = None):
    """Rebuild (model, meta, optimizer tensors) from a checkpoint file."""
    tensors, meta = checkpoint.load_tensors(path)
    config = ModelConfig.from_dict(meta["config"])
    if vocab is None:
        vocab = Vocabulary.from_json(meta["vocab"])
    model = TreeDecoderModel(config, vocab.labels)
    state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    model.load_state_dict(state)
    adam = {k[len("adam/"):]: v for k, v in tensors.items() if k.startswith("adam/")}
    return model, meta, adam


def restore_optimizer(trainer: Trainer, adam: dict, step: int) -> None:
    for name, p in trainer.model.named_parameters():
        if f"{name}/exp_avg" in adam:
            trainer.optim.state[p] = {
                "step": torch.tensor(float(adam[f"{name}/step"][0])),
                "exp_avg": adam[f"{name}/exp_avg"].clone(),
                "exp_avg_sq": adam[f"{name}/exp_avg_sq"].clone(),
            }
    trainer.step = step


def train(dataset: Sequence[Example], model_config: ModelConfig, train_config: TrainConfig, vocab: Vocabulary,
          dev: Sequence[Example] | None = None, run_dir=None, meta: dict | None = None):
    model = build_model(model_config, vocab, seed=train_config.seed)
    trainer = Trainer(model, train_config, run_dir, meta)
    history = trainer.fit(dataset, dev)
    return trainer, history
