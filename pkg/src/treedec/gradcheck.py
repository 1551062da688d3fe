"""Central finite-difference checks for every differentiable building block.

Each case draws a random float64 instance, reduces the op output to a
scalar through a fixed random projection, and compares autograd gradients
with ``(f(x + eps) - f(x - eps)) / 2 eps`` computed element by element.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from . import layers
from .masks import NEG_INF

EPS = 1e-3
TOLERANCE = 1e-2
# instances with a ReLU input closer than this to the kink are redrawn
KINK_MARGIN = 0.05


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_error: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def numeric_grad(f: Callable[[], torch.Tensor], x: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    g = torch.zeros_like(x)
    flat, gflat = x.data.view(-1), g.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        up = f().item()
        flat[i] = old - eps
        down = f().item()
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return g


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    scale = max(a.norm().item(), b.norm().item())
    if scale < 1e-10:
        return 0.0
    return (a - b).norm().item() / scale


def check_function(fn: Callable[..., torch.Tensor], inputs: dict[str, torch.Tensor], seed: int,
                   eps: float = EPS) -> float:
    """Max over inputs of the norm-wise relative gradient error."""
    params = {k: v.detach().clone().double().requires_grad_(True) for k, v in inputs.items()}
    out = fn(**params)
    gen = torch.Generator().manual_seed(seed)
    proj = torch.randn(out.shape, generator=gen, dtype=torch.float64)

    def scalar() -> torch.Tensor:
        with torch.no_grad():
            return (fn(**params) * proj).sum()

    (out * proj).sum().backward()
    worst = 0.0
    for p in params.values():
        num = numeric_grad(scalar, p, eps)
        # unused inputs (e.g. gate weights with gates off) get no autograd grad
        ana = p.grad if p.grad is not None else torch.zeros_like(p)
        worst = max(worst, relative_error(ana, num))
    return worst


def _rand(gen: torch.Generator, *shape: int, scale: float = 1.0) -> torch.Tensor:
    return torch.randn(*shape, generator=gen, dtype=torch.float64) * scale


def _attention_case(gen: torch.Generator, rng: np.random.Generator):
    d, heads, tq, tk = 8, 2, 4, 5
    mask = torch.zeros(heads, tq, tk, dtype=torch.float64)
    hidden = rng.random((heads, tq, tk)) < 0.3
    hidden[..., 0] = False
    mask[torch.from_numpy(hidden)] = NEG_INF
    s = d ** -0.5
    inputs = dict(q=_rand(gen, tq, d), k=_rand(gen, tk, d), v=_rand(gen, tk, d),
                  w_q=_rand(gen, d, d, scale=s), w_k=_rand(gen, d, d, scale=s),
                  w_v=_rand(gen, d, d, scale=s), w_o=_rand(gen, d, d, scale=s),
                  b_q=_rand(gen, d, scale=0.1), b_o=_rand(gen, d, scale=0.1))

    def fn(q, k, v, w_q, w_k, w_v, w_o, b_q, b_o):
        return layers.attention(q, k, v, mask, heads, w_q, w_k, w_v, w_o, b_q=b_q, b_o=b_o)
    return fn, inputs


def _ffn_case(gen: torch.Generator, rng: np.random.Generator):
    d, hidden = 6, 10
    inputs = dict(x=_rand(gen, 3, d), w1=_rand(gen, hidden, d, scale=0.5), b1=_rand(gen, hidden, scale=0.5),
                  w2=_rand(gen, d, hidden, scale=0.5), b2=_rand(gen, d, scale=0.5))
    return layers.ffn, inputs, lambda: layers.linear(inputs["x"], inputs["w1"], inputs["b1"])


def _layer_norm_case(gen: torch.Generator, rng: np.random.Generator):
    d = 7
    inputs = dict(x=_rand(gen, 3, d), gain=_rand(gen, d), bias=_rand(gen, d))
    return layers.layer_norm, inputs


def _embed_case(gen: torch.Generator, rng: np.random.Generator):
    ids = torch.from_numpy(rng.integers(0, 9, size=6))

    def fn(table):
        return layers.embed(ids, table)
    return fn, dict(table=_rand(gen, 9, 5))


def _xent_case(gen: torch.Generator, rng: np.random.Generator):
    targets = torch.from_numpy(rng.integers(0, 11, size=5))

    def fn(logits):
        return layers.xent_loss(logits, targets)
    return fn, dict(logits=_rand(gen, 5, 11, scale=2.0))


def random_adjacency(rng: np.random.Generator, n: int, n_edges: int, n_labels: int) -> torch.Tensor:
    """Head->dependent label matrix (label + 1) for ``n_edges`` distinct edges."""
    adj = torch.zeros(1, n, n, dtype=torch.long)
    pairs = [(u, v) for u in range(n) for v in range(n) if u != v]
    for idx in rng.choice(len(pairs), size=n_edges, replace=False):
        u, v = pairs[idx]
        adj[0, u, v] = int(rng.integers(n_labels)) + 1
    return adj


def _gcn_case(use_gates: bool, use_labels: bool):
    def make(gen: torch.Generator, rng: np.random.Generator):
        d, n, n_labels = 4, 5, 6
        adj = random_adjacency(rng, n, 4, n_labels)
        inputs = dict(h=_rand(gen, 1, n, d), w_dir=_rand(gen, 3, d, d, scale=0.5),
                      b_lab=_rand(gen, n_labels, d, scale=0.5), w_gate=_rand(gen, 3, d),
                      b_gate=_rand(gen, n_labels))

        def fn(h, w_dir, b_lab, w_gate, b_gate):
            return layers.gcn_layer(h, adj, w_dir, b_lab, w_gate, b_gate, use_gates, use_labels)

        def pre():
            return layers.gcn_messages(adj=adj, use_gates=use_gates, use_labels=use_labels, **inputs)
        return fn, inputs, pre
    return make


CASES: dict[str, Callable] = {
    "attention": _attention_case,
    "ffn": _ffn_case,
    "layer_norm": _layer_norm_case,
    "embed": _embed_case,
    "xent": _xent_case,
    "gcn[gates,labels]": _gcn_case(True, True),
    "gcn[gates]": _gcn_case(True, False),
    "gcn[labels]": _gcn_case(False, True),
    "gcn[plain]": _gcn_case(False, False),
}


def run_all(instances: int = 20, seed: int = 0, names: list[str] | None = None) -> list[CheckResult]:
    results = []
    for k, name in enumerate(names or list(CASES)):
        worst = 0.0
        for i in range(instances):
            s = seed * 1_000_003 + k * 10_007 + i
            gen = torch.Generator().manual_seed(s)
            rng = np.random.default_rng(s)
            while True:
                fn, inputs, *kink = CASES[name](gen, rng)
                if not kink or kink[0]().abs().min().item() > KINK_MARGIN:
                    break
            worst = max(worst, check_function(fn, inputs, s))
        results.append(CheckResult(name, instances, worst))
    return results
