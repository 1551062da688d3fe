"""Differentiable building blocks on top of torch autograd.

Functional forms take every parameter explicitly so they can be
finite-difference checked in isolation; the modules only own parameters.
"""
from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .masks import NEG_INF

GCN_DIRECTIONS = ("self", "left", "right")


class MaskError(RuntimeError):
    pass


def embed(ids: Tensor, table: Tensor) -> Tensor:
    if ids.dtype not in (torch.int32, torch.int64):
        raise TypeError("ids must be integer")
    if ids.numel() and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("token id outside embedding table")
    return table[ids]


def sinusoidal_positions(n: int, d: int, dtype=torch.float32) -> Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    i = torch.arange(0, d, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / d)
    pe = torch.zeros(n, d, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : d // 2])
    return pe.to(dtype)


def layer_norm(x: Tensor, gain: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean, unit (biased) variance, then scale/shift."""
    return torch.nn.functional.layer_norm(x, x.shape[-1:], gain, bias, eps)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = x @ w.transpose(-1, -2)
    return y if b is None else y + b


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    if x.shape[-1] != w1.shape[1]:
        raise ValueError(f"ffn input width {x.shape[-1]} != {w1.shape[1]}")
    return linear(torch.relu(linear(x, w1, b1)), w2, b2)


def log_softmax(logits: Tensor) -> Tensor:
    return logits - torch.logsumexp(logits, dim=-1, keepdim=True)


def xent_loss(logits: Tensor, targets: Tensor, reduction: str = "sum") -> Tensor:
    """Cross-entropy of integer targets under softmax(logits)."""
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    nll = -log_softmax(logits).gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    if reduction == "none":
        return nll
    if reduction == "mean":
        return nll.mean()
    return nll.sum()


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Tensor | None,
    heads: int,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    b_q: Tensor | None = None,
    b_k: Tensor | None = None,
    b_v: Tensor | None = None,
    b_o: Tensor | None = None,
    strict: bool = False,
    return_weights: bool = False,
    kv_index: Tensor | None = None,
):
    """Multi-head scaled dot-product attention.

    q: (..., Tq, d), k/v: (..., Tk, d). ``mask`` is additive and broadcasts
    to (..., heads, Tq, Tk); a per-head mask lets individual heads see
    different positions. ``kv_index`` selects, for every query batch row,
    a row of k/v after projection (shared memories are projected once).
    """
    d = q.shape[-1]
    if d % heads:
        raise ValueError(f"d={d} not divisible by heads={heads}")
    dh = d // heads
    lead = q.shape[:-2]

    def split(x: Tensor) -> Tensor:
        return x.reshape(*x.shape[:-1], heads, dh).transpose(-2, -3)

    qh = split(linear(q, w_q, b_q))
    kh = split(linear(k, w_k, b_k))
    vh = split(linear(v, w_v, b_v))
    if kv_index is not None:
        kh, vh = kh[kv_index], vh[kv_index]
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
    if mask is not None:
        if strict and bool((mask <= NEG_INF / 2).all(-1).any()):
            raise MaskError("attention mask hides every key for some query")
        scores = scores + mask
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ vh).transpose(-2, -3).reshape(*lead, q.shape[-2], d)
    out = linear(out, w_o, b_o)
    return (out, weights) if return_weights else out


def gcn_messages(
    h: Tensor,
    adj: Tensor,
    w_dir: Tensor,
    b_lab: Tensor,
    w_gate: Tensor,
    b_gate: Tensor,
    use_gates: bool = True,
    use_labels: bool = True,
) -> Tensor:
    """Pre-activation sum of gated, labelled graph-convolution messages.

    h: (B, T, d). adj: (B, T, T) integer, ``adj[b, u, v] = label + 1`` when
    u is a head of v, else 0. w_dir: (3, d, d) for self/left/right,
    b_lab: (L, d), w_gate: (3, d), b_gate: (L,).

    For node v, self messages come from v, "right" messages from its heads
    and "left" messages from its dependents. Self edges carry no label.
    """
    n_labels = b_lab.shape[0]
    if adj.numel() and int(adj.max()) > n_labels:
        raise ValueError("edge label outside the label inventory")
    adj = adj.long()
    # (B, v, u) views: from heads u of v, and from dependents u of v
    incoming = adj.transpose(-1, -2)
    outgoing = adj
    total = torch.zeros_like(h)
    for k, direction in enumerate(GCN_DIRECTIONS):
        msg = linear(h, w_dir[k])
        if direction == "self":
            if use_gates:
                g = torch.sigmoid(h @ w_gate[k]).unsqueeze(-1)
                msg = g * msg
            total = total + msg
            continue
        lab = incoming if direction == "right" else outgoing
        present = (lab > 0).to(h.dtype)
        idx = (lab - 1).clamp(min=0)
        if use_gates:
            logit = (h @ w_gate[k]).unsqueeze(-2).expand_as(present)
            if use_labels:
                logit = logit + b_gate[idx]
            weight = torch.sigmoid(logit) * present
        else:
            weight = present
        total = total + weight @ msg
        if use_labels:
            per_label = torch.zeros(*weight.shape[:-1], n_labels, dtype=h.dtype, device=h.device)
            per_label.scatter_add_(-1, idx, weight)
            total = total + per_label @ b_lab
    return total


def gcn_layer(
    h: Tensor,
    adj: Tensor,
    w_dir: Tensor,
    b_lab: Tensor,
    w_gate: Tensor,
    b_gate: Tensor,
    use_gates: bool = True,
    use_labels: bool = True,
) -> Tensor:
    """One gated, labelled graph convolution with ReLU (see ``gcn_messages``)."""
    return torch.relu(gcn_messages(h, adj, w_dir, b_lab, w_gate, b_gate, use_gates, use_labels))


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None
        nn.init.xavier_uniform_(self.weight)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(d))
        self.bias = nn.Parameter(torch.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.weight, self.bias, self.eps)


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int):
        super().__init__()
        self.fc1 = Linear(d, hidden)
        self.fc2 = Linear(hidden, d)

    def forward(self, x: Tensor) -> Tensor:
        return ffn(x, self.fc1.weight, self.fc1.bias, self.fc2.weight, self.fc2.bias)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads:
            raise ValueError(f"d_model={d} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d)
        self.k = Linear(d, d)
        self.v = Linear(d, d)
        self.o = Linear(d, d)
        self.strict = False

    def forward(self, query: Tensor, memory: Tensor, mask: Tensor | None = None,
                index: Tensor | None = None) -> Tensor:
        return attention(
            query, memory, memory, mask, self.heads,
            self.q.weight, self.k.weight, self.v.weight, self.o.weight,
            self.q.bias, self.k.bias, self.v.bias, self.o.bias,
            strict=self.strict, kv_index=index,
        )


class GcnLayer(nn.Module):
    def __init__(self, d: int, n_labels: int, use_gates: bool = True, use_labels: bool = True,
                 dropout: float = 0.0):
        super().__init__()
        self.drop = nn.Dropout(dropout)
        self.w_dir = nn.Parameter(torch.empty(3, d, d))
        self.b_lab = nn.Parameter(torch.zeros(n_labels, d))
        self.w_gate = nn.Parameter(torch.empty(3, d))
        self.b_gate = nn.Parameter(torch.zeros(n_labels))
        self.use_gates = use_gates
        self.use_labels = use_labels
        for k in range(3):
            nn.init.xavier_uniform_(self.w_dir.data[k])
        nn.init.normal_(self.w_gate, std=d ** -0.5)

    def forward(self, h: Tensor, adj: Tensor) -> Tensor:
        return self.drop(gcn_layer(h, adj, self.w_dir, self.b_lab, self.w_gate, self.b_gate,
                                   self.use_gates, self.use_labels))


def gcn_param_count(d: int, n_labels: int) -> int:
    return 3 * d * d + n_labels * d + 3 * d + n_labels


class EncoderBlock(nn.Module):
    """Post-norm block: self-attention, feed-forward."""

    def __init__(self, d: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d, heads)
        self.norm1 = LayerNorm(d)
        self.ff = FeedForward(d, ffn_dim)
        self.norm2 = LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor, mask: Tensor | None) -> Tensor:
        x = self.norm1(x + self.drop(self.self_attn(x, x, mask)))
        return self.norm2(x + self.drop(self.ff(x)))


class DecoderBlock(nn.Module):
    """Post-norm block: masked self-attention, cross-attention, feed-forward."""

    def __init__(self, d: int, heads: int, ffn_dim: int, dropout: float = 0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d, heads)
        self.norm1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads)
        self.norm2 = LayerNorm(d)
        self.ff = FeedForward(d, ffn_dim)
        self.norm3 = LayerNorm(d)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor, memory: Tensor, self_mask: Tensor | None, memory_mask: Tensor | None,
                memory_index: Tensor | None = None) -> Tensor:
        x = self.norm1(x + self.drop(self.self_attn(x, x, self_mask)))
        x = self.norm2(x + self.drop(self.cross_attn(x, memory, memory_mask, memory_index)))
        return self.norm3(x + self.drop(self.ff(x)))
