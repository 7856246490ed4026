"""Embedding propagation over reference-network layers.

One round maps H to (D_self + D^{-1/2} S D^{-1/2}) H where D_self is the
diagonal of inverse degrees (the self channel) and S the adjacency. Nodes
with no neighbors pass through unchanged (self coefficient 1). Depth-l
outputs are blended with fixed weights proportional to 1/(l+1).
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .graphs import Adjacency


def propagation_operator(adj: Adjacency, weighted: bool = False) -> sp.csr_matrix:
    """Sparse one-round propagation operator for a network layer."""
    if weighted:
        deg = adj.weighted_degrees()
    else:
        deg = adj.degrees()
    self_coef = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 1.0)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    rows = np.repeat(np.arange(adj.n), np.diff(adj.indptr))
    cols = adj.indices
    vals = adj.weights if weighted else np.ones_like(adj.weights)
    data = vals * inv_sqrt[rows] * inv_sqrt[cols]
    neighbor_part = sp.csr_matrix((data, (rows, cols)), shape=(adj.n, adj.n))
    return (sp.diags(self_coef) + neighbor_part).tocsr()


def propagate(operator: sp.csr_matrix, embeddings: ad.Tensor, depth: int) -> list[ad.Tensor]:
    """Depth-indexed representations h^(0..L); differentiable in the embeddings."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    hs = [embeddings]
    for _ in range(depth):
        hs.append(ad.matmul_const(operator, hs[-1]))
    return hs


def layer_weights(depth: int) -> list[float]:
    """Normalized blend weights 1/(l+1) for l = 0..L, exact via rationals."""
    raw = [Fraction(1, l + 1) for l in range(depth + 1)]
    total = sum(raw)
    return [float(w / total) for w in raw]


def combine_layers(hs: list[ad.Tensor]) -> ad.Tensor:
    weights = layer_weights(len(hs) - 1)
    out = ad.scale(hs[0], weights[0])
    for w, h in zip(weights[1:], hs[1:]):
        out = ad.add(out, ad.scale(h, w))
    return out


def cold_embedding(h_layer: np.ndarray, neighbor_ids: np.ndarray) -> np.ndarray:
    """Mean of one-hop neighbor representations; layer-wide mean as fallback
    when the attribute level was never seen. No gradient is recorded."""
    if len(neighbor_ids) == 0:
        return h_layer.mean(axis=0)
    return h_layer[neighbor_ids].mean(axis=0)
