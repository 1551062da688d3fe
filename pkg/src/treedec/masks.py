"""Additive attention masks: causal, bidirectional-over-prefix and parent."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .depgraph import DepGraph

NEG_INF = -1e9


class MaskKind(enum.Enum):
    VANILLA = "vanilla"
    BIDIRECTIONAL = "bidirectional"
    PARENT = "parent"


@dataclass(frozen=True)
class MaskMatrix:
    visible: np.ndarray  # (d, d) bool, row = query, column = key
    kind: MaskKind

    @property
    def entries(self) -> np.ndarray:
        """0 where visible, -inf elsewhere."""
        return np.where(self.visible, 0.0, -np.inf)

    def additive(self, dtype=np.float32) -> np.ndarray:
        """Finite version of ``entries`` used inside softmax."""
        return np.where(self.visible, 0.0, NEG_INF).astype(dtype)

    def ascii(self) -> str:
        return "\n".join(" ".join("0" if v else "-" for v in row) for row in self.visible)


def vanilla_mask(d: int) -> MaskMatrix:
    if d < 1:
        raise ValueError("d must be >= 1")
    return MaskMatrix(np.tril(np.ones((d, d), dtype=bool)), MaskKind.VANILLA)


def bidirectional_mask(d: int, n: int) -> MaskMatrix:
    """Every row sees the first ``n`` positions and nothing after them."""
    if not 0 <= n <= d:
        raise ValueError(f"need 0 <= n <= d, got n={n}, d={d}")
    vis = np.zeros((d, d), dtype=bool)
    vis[:, :n] = True
    return MaskMatrix(vis, MaskKind.BIDIRECTIONAL)


def parent_mask(graph: DepGraph, d: int, offset: int = 0, until: int | None = None) -> MaskMatrix:
    """Each token sees itself and its heads in ``graph``.

    ``offset`` shifts graph positions (e.g. 1 when a BOS token precedes the
    generated tokens); ``until`` keeps only edges created before that step.
    """
    if len(graph.tokens) + offset > d:
        raise ValueError("graph has more tokens than the mask dimension")
    vis = np.eye(d, dtype=bool)
    for e in graph.edges:
        if until is not None and e.step >= until:
            continue
        vis[e.dependent + offset, e.head + offset] = True
    return MaskMatrix(vis, MaskKind.PARENT)
