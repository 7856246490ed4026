"""Co-purchase reference network and its per-attribute decompositions.

The raw network links two products whenever at least one consumer bought
both inside the observation window. Each attribute-specific layer keeps
only the edges whose endpoints share that attribute's level. Cold products
(absent from the training node set) are attached afterwards purely by
attribute-level equality.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import DataError, ProductCatalog, TransactionLog


@dataclass
class Adjacency:
    """Symmetric sparse adjacency in CSR form, sorted neighbors, no self-loops."""

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges: dict[tuple[int, int], float]) -> "Adjacency":
        """Build from undirected edges keyed by (i, j) with i < j."""
        neigh: list[list[tuple[int, float]]] = [[] for _ in range(n)]
        for (i, j), w in edges.items():
            neigh[i].append((j, w))
            neigh[j].append((i, w))
        indptr = np.zeros(n + 1, dtype=np.int64)
        indices = []
        weights = []
        for i in range(n):
            neigh[i].sort()
            indptr[i + 1] = indptr[i] + len(neigh[i])
            for j, w in neigh[i]:
                indices.append(j)
                weights.append(w)
        return cls(n, indptr,
                   np.asarray(indices, dtype=np.int64),
                   np.asarray(weights, dtype=np.float64))

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        return self.weights[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        """Neighbor counts (unweighted degree)."""
        return np.diff(self.indptr).astype(np.float64)

    def weighted_degrees(self) -> np.ndarray:
        out = np.zeros(self.n)
        np.add.at(out, np.repeat(np.arange(self.n), np.diff(self.indptr)), self.weights)
        return out

    @property
    def n_edges(self) -> int:
        return len(self.indices) // 2

    def edge_list(self) -> Iterator[tuple[int, int, float]]:
        """Undirected edges with i < j, in ascending (i, j) order."""
        for i in range(self.n):
            for j, w in zip(self.neighbors(i), self.neighbor_weights(i)):
                if i < j:
                    yield i, int(j), float(w)


def copurchase_counts(log: TransactionLog, catalog: ProductCatalog,
                      window: tuple[int | None, int | None] | None = None
                      ) -> dict[tuple[int, int], float]:
    """Distinct-consumer co-purchase counts per unordered product pair."""
    if window is not None and (window[0] is not None or window[1] is not None):
        log = log.window(window[0], window[1])
    counts: dict[tuple[int, int], float] = {}
    for consumer, purchases in log.by_consumer().items():
        seen = set()
        for r in purchases:
            idx = catalog.index.get(r.product)
            if idx is None:
                raise DataError(f"transaction references unknown product '{r.product}'")
            seen.add(idx)
        basket = sorted(seen)
        for a in range(len(basket)):
            for b in range(a + 1, len(basket)):
                key = (basket[a], basket[b])
                counts[key] = counts.get(key, 0.0) + 1.0
    return counts


def build_reference_network(log: TransactionLog, catalog: ProductCatalog,
                            window: tuple[int | None, int | None] | None = None,
                            weighted: bool = False) -> Adjacency:
    if len(log) == 0:
        raise DataError("cannot build a reference network from an empty log")
    counts = copurchase_counts(log, catalog, window)
    if not weighted:
        counts = {k: 1.0 for k in counts}
    return Adjacency.from_edges(len(catalog), counts)


def decompose_arn(refnet: Adjacency, level_codes_k: np.ndarray) -> Adjacency:
    """Keep only edges whose endpoints share the attribute level.

    The node set is unchanged; nodes that lose all edges stay isolated.
    """
    if len(level_codes_k) != refnet.n:
        raise DataError("level codes do not match the node count")
    edges = {}
    for i, j, w in refnet.edge_list():
        if level_codes_k[i] == level_codes_k[j]:
            edges[(i, j)] = w
    return Adjacency.from_edges(refnet.n, edges)


@dataclass
class ReferenceGraphs:
    """The raw co-purchase network plus one layer per product attribute."""

    raw: Adjacency
    layers: list[Adjacency]
    weighted: bool

    @property
    def n_layers(self) -> int:
        return len(self.layers)


def build_graphs(log: TransactionLog, catalog: ProductCatalog,
                 window: tuple[int | None, int | None] | None = None,
                 weighted: bool = False,
                 decompose_by_attribute: bool = True) -> ReferenceGraphs:
    """Construct the raw network and the K attribute layers.

    With ``decompose_by_attribute`` off, every layer is the raw network.
    """
    raw = build_reference_network(log, catalog, window=window, weighted=weighted)
    if decompose_by_attribute:
        layers = [decompose_arn(raw, catalog.level_codes[k])
                  for k in range(catalog.n_attributes)]
    else:
        layers = [raw for _ in range(catalog.n_attributes)]
    return ReferenceGraphs(raw=raw, layers=layers, weighted=weighted)


def attach_cold_node(catalog: ProductCatalog, attribute_tokens: list[str]) -> list[np.ndarray]:
    """Per-layer neighbor sets for a product outside the trained node set.

    Neighbors are all catalog products sharing the attribute level,
    regardless of co-purchase records. An unseen level yields an empty set.
    """
    codes = catalog.encode_attributes(attribute_tokens)
    out = []
    for k, code in enumerate(codes):
        if code is None:
            out.append(np.empty(0, dtype=np.int64))
        else:
            out.append(np.nonzero(catalog.level_codes[k] == code)[0].astype(np.int64))
    return out
