"""Encoder-decoder assembly for every decoder variant.

Variants:
    vanilla       causal decoder over plain subwords
    bitran        bidirectional decoder over plain subwords
    linearized    causal decoder over subwords + transition tokens
    gcn           bidirectional decoder, transitions, gated labelled GCN stack
    gcn-nolabels  as gcn without label biases
    gcn-nogates   as gcn without gates and without labels
    parent        bidirectional decoder, transitions, one head sees only heads
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
from torch import Tensor, nn

from . import layers
from .masks import NEG_INF
from .transitions import StackState, Transition, Vocabulary, run

VARIANTS = ("vanilla", "bitran", "linearized", "gcn", "gcn-nogates", "gcn-nolabels", "parent")

PRESETS = {
    "desk": dict(d_model=64, n_enc_blocks=2, n_dec_blocks=2, n_heads=4, ffn_dim=256),
    "medium": dict(d_model=256, n_enc_blocks=4, n_dec_blocks=4, n_heads=8, ffn_dim=1024),
    "large": dict(d_model=512, n_enc_blocks=6, n_dec_blocks=6, n_heads=8, ffn_dim=2048),
}


@dataclass
class ModelConfig:
    variant: str = "vanilla"
    d_model: int = 64
    n_enc_blocks: int = 2
    n_dec_blocks: int = 2
    n_heads: int = 4
    ffn_dim: int = 256
    src_vocab_size: int = 0
    tgt_vocab_size: int = 0
    n_labels: int = 45
    gcn_layers: int | None = None
    use_gates: bool | None = None
    use_labels: bool | None = None
    max_target_subwords: int = 40
    max_source_len: int = 256
    dropout: float = 0.0
    gcn_dropout: float = 0.0  # off by default, exposed for experiments
    tie_embeddings: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.has_gcn:
            if self.gcn_layers is None:
                self.gcn_layers = 2
            if self.gcn_layers < 1:
                raise ValueError("GCN variants need gcn_layers >= 1")
            flags = {"gcn": (True, True), "gcn-nolabels": (True, False), "gcn-nogates": (False, False)}
            gates, labels = flags[self.variant]
            self.use_gates = gates if self.use_gates is None else self.use_gates
            self.use_labels = labels if self.use_labels is None else self.use_labels
        else:
            if self.gcn_layers:
                raise ValueError(f"variant {self.variant} has no GCN stack")
            self.gcn_layers = 0
            self.use_gates = bool(self.use_gates)
            self.use_labels = bool(self.use_labels)
        if self.has_parent and self.n_heads < 2:
            raise ValueError("the parent variant needs at least 2 heads")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def uses_transitions(self) -> bool:
        return self.variant not in ("vanilla", "bitran")

    @property
    def bidirectional(self) -> bool:
        return self.variant not in ("vanilla", "linearized")

    @property
    def has_gcn(self) -> bool:
        return self.variant.startswith("gcn")

    @property
    def has_parent(self) -> bool:
        return self.variant == "parent"

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        return cls(**{**PRESETS[name], **overrides})

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class Example:
    """One training pair as ids; ``edges`` are (head, dep, label index, step) over target positions."""

    src: list[int]
    tgt: list[int]
    edges: list[tuple[int, int, int, int]] = field(default_factory=list)


def target_transitions(seq: Sequence[Transition], config: ModelConfig) -> list[Transition]:
    """The gold output for a variant: structure-free variants drop arc tokens."""
    if config.uses_transitions:
        return list(seq)
    return [x for x in seq if not x.is_arc]


def encode_example(src_ids: list[int], seq: Sequence[Transition], vocab: Vocabulary, config: ModelConfig) -> Example:
    seq = target_transitions(seq, config)
    state = run(seq)
    tgt = [vocab.encode(x) for x in seq] + [vocab.eos]
    edges = [(e.head, e.dependent, vocab.label_index[e.label], e.step) for e in state.edges]
    return Example(list(src_ids), tgt, edges)


@dataclass
class DecoderState:
    ids: tuple[int, ...] = ()
    stack: StackState = field(default_factory=StackState)

    @property
    def step(self) -> int:
        return len(self.ids)


def _additive(visible: Tensor, dtype=torch.float32) -> Tensor:
    return torch.where(visible, torch.zeros((), dtype=dtype), torch.full((), NEG_INF, dtype=dtype))


class TreeDecoderModel(nn.Module):
    def __init__(self, config: ModelConfig, labels: Sequence[str] | None = None):
        super().__init__()
        if config.src_vocab_size < 1 or config.tgt_vocab_size < 1:
            raise ValueError("vocabulary sizes must be set")
        self.config = config
        self.label_index = {lab: i for i, lab in enumerate(labels or ())}
        if labels is not None and len(labels) != config.n_labels:
            raise ValueError(f"config expects {config.n_labels} labels, got {len(labels)}")
        d = config.d_model
        self.src_embed = nn.Parameter(torch.randn(config.src_vocab_size, d) * d ** -0.5)
        self.tgt_embed = nn.Parameter(torch.randn(config.tgt_vocab_size, d) * d ** -0.5)
        self.encoder = nn.ModuleList(
            layers.EncoderBlock(d, config.n_heads, config.ffn_dim, config.dropout) for _ in range(config.n_enc_blocks)
        )
        self.gcn = nn.ModuleList(
            layers.GcnLayer(d, config.n_labels, config.use_gates, config.use_labels, config.gcn_dropout) for _ in range(config.gcn_layers)
        )
        self.decoder = nn.ModuleList(
            layers.DecoderBlock(d, config.n_heads, config.ffn_dim, config.dropout) for _ in range(config.n_dec_blocks)
        )
        self.out_proj = None if config.tie_embeddings else layers.Linear(d, config.tgt_vocab_size)
        self.out_bias = nn.Parameter(torch.zeros(config.tgt_vocab_size)) if config.tie_embeddings else None
        self.register_buffer("positions", layers.sinusoidal_positions(512, d), persistent=False)
        self.emb_drop = nn.Dropout(config.dropout)

    def set_strict(self, strict: bool) -> None:
        for m in self.modules():
            if isinstance(m, layers.MultiHeadAttention):
                m.strict = strict

    def _embed(self, ids: Tensor, table: Tensor) -> Tensor:
        n = ids.shape[-1]
        if n > self.positions.shape[0]:
            self.positions = layers.sinusoidal_positions(2 * n, self.config.d_model).to(self.positions.device)
        x = layers.embed(ids, table) * math.sqrt(self.config.d_model) + self.positions[:n]
        return self.emb_drop(x)

    # encoder

    def encode(self, src: Tensor, src_pad: Tensor | None = None) -> tuple[Tensor, Tensor | None]:
        """src: (B, S) ids. Returns (memory, additive key mask broadcastable to (B, H, *, S))."""
        if src.shape[-1] > self.config.max_source_len:
            warnings.warn(f"source of length {src.shape[-1]} truncated to {self.config.max_source_len}")
            src = src[..., : self.config.max_source_len]
            src_pad = None if src_pad is None else src_pad[..., : self.config.max_source_len]
        key_mask = None if src_pad is None else _additive(~src_pad)[:, None, None, :]
        x = self._embed(src, self.src_embed)
        for block in self.encoder:
            x = block(x, key_mask)
        return x, key_mask

    # decoder

    def self_attention_mask(self, length: int, visible: Tensor, parents: Tensor | None = None) -> Tensor:
        """Additive self-attention mask of shape (R, H or 1, T, T).

        ``visible[r]`` is the number of input positions (BOS included) known
        for row r; ``parents[r, i, j]`` marks j as a head of i.
        """
        T = length
        j = torch.arange(T)
        known = j[None, None, :] < visible[:, None, None]
        if self.config.bidirectional:
            vis = known.expand(-1, T, -1)
        else:
            vis = known & (j[None, :, None] >= j[None, None, :])
        if not self.config.has_parent:
            return _additive(vis)[:, None]
        eye = torch.eye(T, dtype=torch.bool)[None]
        own = eye | parents
        heads = [vis] * (self.config.n_heads - 1) + [own]
        return _additive(torch.stack(heads, dim=1))

    def decode_hidden(
        self,
        tgt_in: Tensor,
        memory: Tensor,
        memory_mask: Tensor | None,
        self_mask: Tensor,
        adj: Tensor | None = None,
        memory_index: Tensor | None = None,
    ) -> Tensor:
        """Decoder states for every input position.

        With ``memory_index`` each decoder row r attends to memory row
        ``memory_index[r]`` (memory_mask stays per memory row).
        """
        x = self._embed(tgt_in, self.tgt_embed)
        if self.config.has_gcn:
            for layer in self.gcn:
                x = x + layer(x, adj)
        if memory_index is not None and memory_mask is not None:
            memory_mask = memory_mask[memory_index]
        for block in self.decoder:
            x = block(x, memory, self_mask, memory_mask, memory_index)
        return x

    def project(self, hidden: Tensor) -> Tensor:
        if self.out_proj is None:
            return layers.linear(hidden, self.tgt_embed, self.out_bias)
        return self.out_proj(hidden)

    def graph_inputs(self, states: Sequence[StackState], length: int) -> tuple[Tensor | None, Tensor | None]:
        """Adjacency (label + 1) and parent pattern over decoder inputs (BOS at 0)."""
        if not (self.config.has_gcn or self.config.has_parent):
            return None, None
        adj = torch.zeros(len(states), length, length, dtype=torch.long)
        label_index = self.label_index
        idx = [(r, e.head + 1, e.dependent + 1, label_index[e.label] + 1) for r, st in enumerate(states) for e in st.edges]
        if idx:
            r, h, d, lab = torch.tensor(idx, dtype=torch.long).unbind(1)
            adj[r, h, d] = lab
        return adj, (adj > 0).transpose(-1, -2)

    def decode_step(self, states: Sequence[DecoderState], memory: Tensor, memory_mask: Tensor | None) -> Tensor:
        """Next-token logits (B, V) for hypotheses of equal length, fully re-encoded."""
        n = len(states[0].ids)
        if any(len(s.ids) != n for s in states):
            raise ValueError("decode_step needs hypotheses of equal length")
        B = len(states)
        tgt_in = torch.tensor([[1, *s.ids] for s in states], dtype=torch.long)
        adj, parents = self.graph_inputs([s.stack for s in states], n + 1)
        visible = torch.full((B,), n + 1, dtype=torch.long)
        mask = self.self_attention_mask(n + 1, visible, parents)
        if memory.shape[0] != B:
            memory = memory.expand(B, -1, -1)
            if memory_mask is not None:
                memory_mask = memory_mask.expand(B, -1, -1, -1)
        hidden = self.decode_hidden(tgt_in, memory, memory_mask, mask, adj)
        return self.project(hidden[:, -1])

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def _pad(seqs: Sequence[Sequence[int]], value: int = 0) -> Tensor:
    T = max(len(s) for s in seqs)
    out = torch.full((len(seqs), T), value, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def _encode_batch(model: TreeDecoderModel, examples: Sequence[Example]):
    src = _pad([e.src for e in examples])
    src_pad = _pad([[0] * len(e.src) for e in examples], value=1).bool()
    return model.encode(src, src_pad)


def token_losses(
    model: TreeDecoderModel,
    examples: Sequence[Example],
    mode: str = "exact",
    strict: bool = True,
) -> list[Tensor]:
    """Per-position cross-entropy for every example under teacher forcing.

    ``exact`` re-encodes every gold prefix separately (one decoder row per
    prefix, future positions masked as keys and absent from the graph).
    ``causal`` runs one pass with a causal mask and is only leak-free for the
    causal variants.
    """
    cfg = model.config
    if mode == "causal" and cfg.bidirectional and strict:
        raise ValueError(f"causal teacher forcing would leak future tokens for variant {cfg.variant}")
    if mode not in ("exact", "causal"):
        raise ValueError(f"unknown mode {mode!r}")
    memory, memory_mask = _encode_batch(model, examples)
    lengths = [len(e.tgt) for e in examples]
    T = max(lengths)
    tgt_in = _pad([[1, *e.tgt[:-1]] for e in examples])

    if mode == "causal":
        visible = torch.tensor(lengths)
        mask = model.self_attention_mask(T, visible)
        adj = None
        if cfg.has_gcn:
            adj = torch.stack([_full_adjacency(e, T)[0] for e in examples])
        if cfg.has_parent:
            raise ValueError("causal mode is undefined for the parent variant")
        hidden = model.decode_hidden(tgt_in, memory, memory_mask, mask, adj)
        logits = model.project(hidden)
        targets = _pad([e.tgt for e in examples])
        nll = layers.xent_loss(logits, targets, reduction="none")
        return [nll[i, :n] for i, n in enumerate(lengths)]

    rows = [(i, p) for i, n in enumerate(lengths) for p in range(1, n + 1)]
    graphs = None
    if cfg.has_gcn or cfg.has_parent:
        graphs = [_full_adjacency(e, T) for e in examples]
    nll = torch.empty(len(rows), dtype=memory.dtype)
    offsets = [0]
    for n in lengths:
        offsets.append(offsets[-1] + n)
    for bucket in _length_buckets(rows):
        Tb = max(p for _, p in bucket)
        sent = torch.tensor([i for i, _ in bucket])
        visible = torch.tensor([p for _, p in bucket])
        adj = parents = None
        if graphs is not None:
            adj = torch.stack([
                graphs[i][0][:Tb, :Tb] * (graphs[i][1][:Tb, :Tb] < p) for i, p in bucket
            ])
            parents = (adj > 0).transpose(-1, -2)
        mask = model.self_attention_mask(Tb, visible, parents)
        hidden = model.decode_hidden(tgt_in[sent, :Tb], memory, memory_mask, mask,
                                     adj if cfg.has_gcn else None, memory_index=sent)
        last = hidden[torch.arange(len(bucket)), visible - 1]
        targets = torch.tensor([examples[i].tgt[p - 1] for i, p in bucket])
        loss = layers.xent_loss(model.project(last), targets, reduction="none")
        where = torch.tensor([offsets[i] + p - 1 for i, p in bucket])
        nll = nll.index_put((where,), loss)
    return list(torch.split(nll, lengths))


def _length_buckets(rows: list[tuple[int, int]], n_buckets: int = 3) -> list[list[tuple[int, int]]]:
    """Split prefix rows into groups of similar length (depends only on lengths)."""
    ordered = sorted(rows, key=lambda r: (r[1], r[0]))
    size = -(-len(ordered) // n_buckets)
    return [ordered[k:k + size] for k in range(0, len(ordered), size)]


def _full_adjacency(example: Example, T: int) -> tuple[Tensor, Tensor]:
    """Adjacency over decoder inputs and, per edge, the input position of its creator."""
    adj = torch.zeros(T, T, dtype=torch.long)
    created = torch.full((T, T), T + 1, dtype=torch.long)
    for h, d, lab, step in example.edges:
        if h + 1 < T and d + 1 < T:
            adj[h + 1, d + 1] = lab + 1
            created[h + 1, d + 1] = step + 1
    return adj, created


def teacher_forced_loss(model: TreeDecoderModel, examples: Sequence[Example], mode: str = "exact",
                        strict: bool = True) -> Tensor:
    """Summed cross-entropy over all target positions of all examples."""
    return torch.stack([t.sum() for t in token_losses(model, examples, mode, strict)]).sum()


def build_model(config: ModelConfig, vocab: Vocabulary, seed: int = 0) -> TreeDecoderModel:
    torch.manual_seed(seed)
    return TreeDecoderModel(config, vocab.labels)
