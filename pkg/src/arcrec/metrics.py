"""Ranking agreement and top-K metrics.

Kendall's tau is computed by mergesort inversion counting in O(n log n);
Spearman's rho from squared rank differences. HR@K and nDCG@K assume a
single relevant item per consumer, so nDCG's ideal gain is 1.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def _count_inversions(seq: list[int]) -> int:
    n = len(seq)
    if n < 2:
        return 0
    mid = n // 2
    left, right = seq[:mid], seq[mid:]
    inv = _count_inversions(left) + _count_inversions(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            j += 1
            inv += len(left) - i
    merged.extend(left[i:])
    merged.extend(right[j:])
    seq[:] = merged
    return inv


def kendall_tau(truth: Sequence, predicted: Sequence) -> float:
    """Rank correlation of two permutations of the same items, in [-1, 1]."""
    n = len(truth)
    if n < 2:
        raise ValueError("need at least 2 items")
    if len(predicted) != n or set(truth) != set(predicted):
        raise ValueError("lists must be permutations of the same items")
    pos = {item: r for r, item in enumerate(truth)}
    seq = [pos[item] for item in predicted]
    inv = _count_inversions(seq)
    total = n * (n - 1) // 2
    concordant = total - inv
    return 4.0 * concordant / (n * (n - 1)) - 1.0


def spearman_rho(truth: Sequence, predicted: Sequence) -> float:
    """1 - 6*sum(d^2)/(n^3 - n) over positional rank differences."""
    n = len(truth)
    if n < 2:
        raise ValueError("need at least 2 items")
    if len(predicted) != n or set(truth) != set(predicted):
        raise ValueError("lists must be permutations of the same items")
    pos = {item: r for r, item in enumerate(truth)}
    d2 = sum((pos[item] - r) ** 2 for r, item in enumerate(predicted))
    return 1.0 - 6.0 * d2 / (n ** 3 - n)


def hit_position(ranked: Sequence, held_out) -> int | None:
    """1-based position of the held-out item, None if absent."""
    for p, item in enumerate(ranked, start=1):
        if item == held_out:
            return p
    return None


def hit_ratio(ranked_lists: Sequence[Sequence], held_out: Sequence, k: int) -> float:
    """Fraction of consumers whose held-out item sits in their top-K."""
    hits = 0
    for ranked, item in zip(ranked_lists, held_out):
        p = hit_position(ranked, item)
        if p is None:
            raise ValueError(f"held-out item {item!r} missing from candidate ranking")
        if p <= k:
            hits += 1
    return hits / len(held_out)


def ndcg(ranked_lists: Sequence[Sequence], held_out: Sequence, k: int) -> float:
    """Mean position-discounted gain of the single relevant item (IDCG = 1)."""
    total = 0.0
    for ranked, item in zip(ranked_lists, held_out):
        p = hit_position(ranked, item)
        if p is None:
            raise ValueError(f"held-out item {item!r} missing from candidate ranking")
        if p <= k:
            total += 1.0 / math.log2(p + 1)
    return total / len(held_out)


def rank_descending(scores: np.ndarray, tie_rank: np.ndarray) -> np.ndarray:
    """Indices ordered by descending score; ties broken by ascending tie_rank
    (rank of the product id string), so rankings are reproducible."""
    return np.lexsort((tie_rank, -scores))
