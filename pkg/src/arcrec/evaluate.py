"""Evaluation protocols: splits, ranking agreement, top-K, cold start,
and the controlled price-treatment experiment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import DataError, ProductCatalog, TransactionLog
from .metrics import hit_position, kendall_tau, rank_descending, spearman_rho
from .model import ArcRec, ColdBlock


@dataclass
class Splits:
    """Per-consumer leave-last-one-out split of a purchase log."""

    train: TransactionLog
    val_item: dict[str, str]
    test_item: dict[str, str]
    excluded: list[str]
    train_items: dict[str, set[str]] = field(init=False)

    def __post_init__(self):
        items: dict[str, set[str]] = {}
        for r in self.train.records:
            items.setdefault(r.consumer, set()).add(r.product)
        self.train_items = items


def leave_last_one_out_split(log: TransactionLog, with_validation: bool = True) -> Splits:
    """Last purchase per consumer -> test; last-but-one -> validation
    (when present); the rest trains. Consumers with < 2 purchases are
    left out entirely."""
    train_records = []
    val_item: dict[str, str] = {}
    test_item: dict[str, str] = {}
    excluded = []
    for consumer, purchases in log.by_consumer().items():
        if len(purchases) < 2:
            excluded.append(consumer)
            continue
        test_item[consumer] = purchases[-1].product
        rest = purchases[:-1]
        if with_validation and len(rest) >= 2:
            val_item[consumer] = rest[-1].product
            rest = rest[:-1]
        train_records.extend(rest)
    if not train_records:
        raise DataError("empty training split")
    return Splits(TransactionLog(train_records), val_item, test_item, sorted(excluded))


def holdout_last_split(log: TransactionLog) -> Splits:
    """Hold out only the last purchase per consumer, as validation.

    Used when the test signal comes from simulation ground truth rather
    than a held-out purchase."""
    train_records = []
    val_item: dict[str, str] = {}
    excluded = []
    for consumer, purchases in log.by_consumer().items():
        if len(purchases) < 2:
            excluded.append(consumer)
            continue
        val_item[consumer] = purchases[-1].product
        train_records.extend(purchases[:-1])
    if not train_records:
        raise DataError("empty training split")
    return Splits(TransactionLog(train_records), val_item, {}, sorted(excluded))


# ---------------------------------------------------------------------------
# top-K evaluation against held-out purchases
# ---------------------------------------------------------------------------

def _topk_curves(positions: list[int], ks: Sequence[int]) -> tuple[dict, dict]:
    hr = {}
    nd = {}
    n = len(positions)
    for k in ks:
        hr[k] = sum(1 for p in positions if p <= k) / n
        nd[k] = sum(1.0 / np.log2(p + 1) for p in positions if p <= k) / n
    return hr, nd


def standard_eval(model: ArcRec, splits: Splits, ks: Sequence[int],
                  workers: int = 1) -> dict:
    """Rank each consumer's held-out purchase among all non-trained products.

    Consumers whose held-out item also sits in their training items cannot
    be ranked under this candidate rule and are counted as skipped.
    """
    catalog = model.catalog
    id_rank = catalog.id_rank()
    consumers = []
    for c, item in sorted(splits.test_item.items()):
        pos = model.consumer_index.get(c)
        if pos is None or len(model.references_of(pos)) == 0:
            continue
        consumers.append((c, pos, item))

    positions = []
    skipped = 0
    all_idx = np.arange(len(catalog))

    def one(args):
        c, pos, item = args
        trained = splits.train_items.get(c, set())
        if item in trained or item not in catalog.index:
            return None
        mask = np.ones(len(catalog), dtype=bool)
        for pid in trained:
            mask[catalog.index[pid]] = False
        candidates = all_idx[mask]
        scores = model.score_candidates(pos, candidates)
        order = rank_descending(scores, id_rank[candidates])
        ranked_ids = [catalog.product_ids[candidates[i]] for i in order]
        return hit_position(ranked_ids, item)

    for res in _map(one, consumers, workers):
        if res is None:
            skipped += 1
        else:
            positions.append(res)

    if not positions:
        return {"n_consumers": 0, "n_skipped": skipped, "hr": {}, "ndcg": {}}
    hr, nd = _topk_curves(positions, ks)
    return {"n_consumers": len(positions), "n_skipped": skipped,
            "hr": {str(k): v for k, v in hr.items()},
            "ndcg": {str(k): v for k, v in nd.items()}}


# ---------------------------------------------------------------------------
# ranking-agreement evaluation against simulation truth
# ---------------------------------------------------------------------------

def correlation_eval(score_fn: Callable[[str], np.ndarray],
                     truth_rankings: dict[str, list[int]],
                     consumers: Sequence[str],
                     id_rank: np.ndarray, workers: int = 1) -> dict:
    """Mean Kendall/Spearman agreement between predicted full-catalog
    rankings and ground-truth rankings (lists of product indices)."""
    taus = []
    rhos = []

    def one(c):
        scores = score_fn(c)
        predicted = list(rank_descending(scores, id_rank))
        return (kendall_tau(truth_rankings[c], predicted),
                spearman_rho(truth_rankings[c], predicted))

    used = [c for c in consumers if c in truth_rankings]
    for tau, rho in _map(one, used, workers):
        taus.append(tau)
        rhos.append(rho)
    if not taus:
        raise DataError("no consumers eligible for correlation evaluation")
    return {"n_consumers": len(taus),
            "kendall_tau": float(np.mean(taus)),
            "spearman_rho": float(np.mean(rhos))}


# ---------------------------------------------------------------------------
# cold-start protocol
# ---------------------------------------------------------------------------

def choose_cold_products(catalog: ProductCatalog, fraction: float,
                         rng: np.random.Generator) -> list[str]:
    if fraction <= 0:
        raise DataError("cold-start holdout fraction must be positive")
    n_cold = max(1, int(round(fraction * len(catalog))))
    picked = rng.choice(len(catalog), size=n_cold, replace=False)
    return [catalog.product_ids[i] for i in sorted(picked)]


def cold_start_eval(model: ArcRec, full_catalog: ProductCatalog,
                    cold_ids: Sequence[str], full_log: TransactionLog,
                    ks: Sequence[int]) -> dict:
    """Rank cold products for every consumer who actually bought one.

    The relevant item is the consumer's most recent cold purchase; the
    candidate set is the whole cold set.
    """
    cold_set = set(cold_ids)
    cold_ids = sorted(cold_set)
    tokens = []
    prices = []
    for pid in cold_ids:
        row = full_catalog.index[pid]
        tokens.append([full_catalog.tokens[k][row]
                       for k in range(full_catalog.n_attributes)])
        prices.append(float(full_catalog.prices[row]))
    block = model.cold_block(cold_ids, tokens, np.asarray(prices))

    relevant: dict[str, str] = {}
    for r in full_log.records:  # canonical order: later records overwrite
        if r.product in cold_set:
            relevant[r.consumer] = r.product

    tie = np.arange(len(cold_ids))  # cold_ids sorted ascending, so index = id rank
    positions = []
    flagged = 0
    for c in sorted(relevant):
        pos = model.consumer_index.get(c)
        if pos is None or len(model.references_of(pos)) == 0:
            flagged += 1
            continue
        scores = model.score_cold(pos, block)
        order = rank_descending(scores, tie)
        ranked_ids = [cold_ids[i] for i in order]
        positions.append(hit_position(ranked_ids, relevant[c]))

    report = {"n_cold_products": len(cold_ids), "n_consumers": len(positions),
              "n_flagged": flagged,
              "random_hr": {str(k): min(k, len(cold_ids)) / len(cold_ids) for k in ks}}
    if not positions:
        report.update({"hr": {}, "ndcg": {}, "empty": True})
        return report
    hr, nd = _topk_curves(positions, ks)
    report["hr"] = {str(k): v for k, v in hr.items()}
    report["ndcg"] = {str(k): v for k, v in nd.items()}
    return report


# ---------------------------------------------------------------------------
# price-treatment controlled experiment
# ---------------------------------------------------------------------------

@dataclass
class TreatmentConfig:
    group_size: int = 50
    n_candidates: int = 30
    repetitions: int = 30
    price_delta: float = 0.10
    pool_quantile: float = 0.25
    full_assortment: bool = False


def sensitivity_pools(sensitivities: dict[str, float], eligible: Sequence[str],
                      quantile: float = 0.25) -> tuple[list[str], list[str]]:
    """Consumers in the bottom/top |sensitivity| quantile: low pool first.

    A 0.5 quantile is a plain median split; the default keeps the pools at
    the distribution's ends so the groups are clearly price-insensitive
    versus price-sensitive.
    """
    if not (0.0 < quantile <= 0.5):
        raise DataError("pool quantile must be in (0, 0.5]")
    scored = sorted(((abs(sensitivities[c]), c) for c in eligible if c in sensitivities))
    if len(scored) < 2:
        raise DataError("not enough consumers with a sensitivity value")
    take = max(1, int(round(quantile * len(scored))))
    low = [c for _, c in scored[:take]]
    high = [c for _, c in scored[-take:]]
    return low, high


def treatment_experiment(score_fn: Callable[[str, np.ndarray], tuple[np.ndarray, np.ndarray]],
                         prices_raw: np.ndarray, id_rank: np.ndarray,
                         low_pool: Sequence[str], high_pool: Sequence[str],
                         config: TreatmentConfig, rng: np.random.Generator) -> dict:
    """Rank shift of every candidate under a one-product-at-a-time price change.

    ``score_fn(consumer, product_idx)`` returns utilities plus their
    derivative in the target's raw price; a treated product's new rank is
    found against the unchanged scores of the others. Ranks live inside the
    sampled candidate set, or the whole assortment with ``full_assortment``.
    """
    if len(low_pool) < config.group_size or len(high_pool) < config.group_size:
        raise DataError(
            f"need {config.group_size} consumers per sensitivity group, have "
            f"{len(low_pool)} low / {len(high_pool)} high")
    n_products = len(prices_raw)
    rows = []
    for rep in range(config.repetitions):
        low = [low_pool[i] for i in
               rng.choice(len(low_pool), size=config.group_size, replace=False)]
        high = [high_pool[i] for i in
                rng.choice(len(high_pool), size=config.group_size, replace=False)]
        candidates = np.sort(rng.choice(n_products, size=config.n_candidates,
                                        replace=False))
        pool = np.arange(n_products) if config.full_assortment else candidates
        treated_at = np.searchsorted(pool, candidates)
        tie = id_rank[pool]
        for sign, label in ((-1.0, "-10%"), (1.0, "+10%")):
            delta = sign * config.price_delta
            for group, members in (("low", low), ("high", high)):
                te_total = 0.0
                for c in members:
                    scores, slopes = score_fn(c, pool)
                    order = rank_descending(scores, tie)
                    rank_of = np.empty(len(pool), dtype=np.int64)
                    rank_of[order] = np.arange(1, len(pool) + 1)
                    shift = slopes[treated_at] * (prices_raw[candidates] * delta)
                    new_scores = scores[treated_at] + shift
                    # treated-vs-untreated pairwise comparison, one treated
                    # candidate at a time against everyone else's old score
                    beats = (scores[None, :] > new_scores[:, None]) | (
                        (scores[None, :] == new_scores[:, None])
                        & (tie[None, :] < tie[treated_at][:, None]))
                    beats[np.arange(len(candidates)), treated_at] = False
                    new_rank = beats.sum(axis=1) + 1
                    te_total += float(np.mean(new_rank - rank_of[treated_at]))
                rows.append({"repetition": rep, "treatment": label,
                             "group": group, "ate": te_total / len(members)})
    summary: dict[str, dict[str, dict[str, float]]] = {}
    for label in ("-10%", "+10%"):
        summary[label] = {}
        for group in ("low", "high"):
            vals = [r["ate"] for r in rows
                    if r["treatment"] == label and r["group"] == group]
            summary[label][group] = {"mean": float(np.mean(vals)),
                                     "std": float(np.std(vals))}
    return {"rows": rows, "ate": summary}


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
