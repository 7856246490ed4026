"""Pairwise ranking training: triplet sampling, loss, loop, checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .data import DataError, ProductCatalog, TransactionLog
from .evaluate import Splits, holdout_last_split, leave_last_one_out_split
from .graphs import build_graphs
from .ioutils import jsonable, write_text_atomic
from .metrics import rank_descending
from .model import ArcRec, ModelConfig, build_references
from .optim import Adam


@dataclass
class TrainConfig:
    dim: int = 64
    depth: int = 2
    batch_size: int = 500
    lr: float = 0.003
    l2: float = 0.0001
    max_epochs: int = 50
    patience: int = 10
    seed: int = 0
    reference_cap: int = 50
    val_consumers: int = 150
    val_candidates: int = 100
    split_mode: str = "lloo"            # lloo | valonly
    standardize_prices: bool = True
    weighted_edges: bool = False
    quantile_bins: int = 5
    numeric_attributes: list[str] = field(default_factory=list)
    window_start: int | None = None
    window_end: int | None = None
    cold_holdout_fraction: float = 0.0
    use_propagation: bool = True
    decompose_by_attribute: bool = True
    use_awtp: bool = True
    awtp_full_gradient: bool = False
    mlp_init_std: float = 0.3
    activation: str = "tanh"
    restore_best: bool = True

    def validate(self) -> None:
        positive = {"dim": self.dim, "batch_size": self.batch_size, "lr": self.lr,
                    "l2": self.l2, "max_epochs": self.max_epochs,
                    "patience": self.patience, "reference_cap": self.reference_cap,
                    "val_consumers": self.val_consumers,
                    "val_candidates": self.val_candidates}
        for name, v in positive.items():
            if v <= 0 and not (name == "lr" and v == 0.0) and not (name == "l2" and v == 0.0):
                raise ValueError(f"{name} must be positive, got {v}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.split_mode not in ("lloo", "valonly"):
            raise ValueError(f"unknown split_mode '{self.split_mode}'")
        if self.activation not in ("tanh", "sigmoid"):
            raise ValueError(f"unknown activation '{self.activation}'")
        if not (0.0 <= self.cold_holdout_fraction < 1.0):
            raise ValueError("cold_holdout_fraction must be in [0, 1)")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim, depth=self.depth, reference_cap=self.reference_cap,
            use_propagation=self.use_propagation,
            decompose_by_attribute=self.decompose_by_attribute,
            use_awtp=self.use_awtp, awtp_full_gradient=self.awtp_full_gradient,
            standardize_prices=self.standardize_prices,
            mlp_init_std=self.mlp_init_std, activation=self.activation,
            weighted_edges=self.weighted_edges)


class TripletSampler:
    """Uniform consumer, uniform positive, rejection-sampled uniform negative.

    Consumers need at least two distinct trained products (so a reference
    set survives positive-exclusion) and at least one non-purchased product.
    """

    def __init__(self, train_items: dict[str, set[str]], catalog: ProductCatalog,
                 consumer_index: dict[str, int]):
        self.n_products = len(catalog)
        self.consumers = []
        self.positives = []
        self.item_sets = []
        for c in sorted(train_items):
            items = sorted(catalog.index[p] for p in train_items[c])
            if len(items) < 2 or len(items) >= self.n_products:
                continue
            self.consumers.append(consumer_index[c])
            self.positives.append(np.array(items, dtype=np.int64))
            self.item_sets.append(frozenset(items))
        if not self.consumers:
            raise DataError("no consumer is eligible for triplet sampling")
        self.consumers = np.array(self.consumers, dtype=np.int64)

    def sample(self, size: int, rng: np.random.Generator
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        which = rng.integers(0, len(self.consumers), size=size)
        u = self.consumers[which]
        i = np.empty(size, dtype=np.int64)
        j = np.empty(size, dtype=np.int64)
        for s, w in enumerate(which):
            pos = self.positives[w]
            i[s] = pos[rng.integers(0, len(pos))]
            while True:
                cand = int(rng.integers(0, self.n_products))
                if cand not in self.item_sets[w]:
                    j[s] = cand
                    break
        return u, i, j


def bpr_loss(pos_scores: Tensor, neg_scores: Tensor,
             params: list[Tensor], l2: float) -> Tensor:
    """-sum log sigmoid(pos - neg) plus L2 over all parameters."""
    data = ad.neg(ad.tsum(ad.log_sigmoid(ad.sub(pos_scores, neg_scores))))
    if l2 == 0.0:
        return data
    reg = None
    for p in params:
        sq = ad.tsum(ad.mul(p, p))
        reg = sq if reg is None else ad.add(reg, sq)
    return ad.add(data, ad.scale(reg, l2))


@dataclass
class ValSet:
    consumer_pos: list[int]
    item_idx: list[int]
    candidates: list[np.ndarray]  # per consumer, includes the held-out item


def _build_val_set(splits: Splits, catalog: ProductCatalog,
                   consumer_index: dict[str, int], n_consumers: int,
                   n_candidates: int, rng: np.random.Generator) -> ValSet:
    eligible = [c for c in sorted(splits.val_item)
                if c in consumer_index and splits.val_item[c] in catalog.index
                and splits.val_item[c] not in splits.train_items.get(c, set())]
    if len(eligible) > n_consumers:
        pick = rng.choice(len(eligible), size=n_consumers, replace=False)
        eligible = [eligible[i] for i in sorted(pick)]
    consumer_pos, item_idx, candidates = [], [], []
    n = len(catalog)
    for c in eligible:
        item = catalog.index[splits.val_item[c]]
        banned = {catalog.index[p] for p in splits.train_items.get(c, set())}
        banned.add(item)
        pool = np.array([p for p in range(n) if p not in banned], dtype=np.int64)
        take = min(max(n_candidates - 1, 0), len(pool))
        negs = pool[rng.choice(len(pool), size=take, replace=False)] if take else []
        cand = np.sort(np.append(np.asarray(negs, dtype=np.int64), item))
        consumer_pos.append(consumer_index[c])
        item_idx.append(item)
        candidates.append(cand)
    return ValSet(consumer_pos, item_idx, candidates)


def _val_metric(score_fn, val: ValSet, id_rank: np.ndarray, k: int = 10
                ) -> tuple[float, float]:
    if not val.consumer_pos:
        return float("nan"), float("nan")
    hits = 0
    gain = 0.0
    for pos, item, cand in zip(val.consumer_pos, val.item_idx, val.candidates):
        scores = score_fn(pos, cand)
        order = rank_descending(scores, id_rank[cand])
        where = int(np.nonzero(cand[order] == item)[0][0]) + 1
        if where <= k:
            hits += 1
            gain += 1.0 / np.log2(where + 1)
    n = len(val.consumer_pos)
    return hits / n, gain / n


@dataclass
class TrainResult:
    model: ArcRec
    history: list[dict]
    best_epoch: int
    splits: Splits
    sampler: TripletSampler
    cold_product_ids: list[str]

    def history_jsonl(self) -> str:
        lines = [json.dumps(jsonable(row), sort_keys=True) for row in self.history]
        return "".join(line + "\n" for line in lines)


def make_splits(log: TransactionLog, config: TrainConfig) -> Splits:
    if config.split_mode == "lloo":
        return leave_last_one_out_split(log)
    return holdout_last_split(log)


def train_arcrec(log: TransactionLog, catalog: ProductCatalog, config: TrainConfig,
                 progress=None) -> TrainResult:
    """Full training per the sampled pairwise-ranking procedure.

    Every batch re-propagates embeddings once over the (fixed) graphs,
    refreshes the salience weights for the sampled consumers, scores the
    positive and negative targets against the positive-excluded reference
    set, and applies one Adam update to all parameters. Keeps the
    parameters of the best validation epoch.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    init_rng, sample_rng, val_rng = rng.spawn(3)

    cold_ids: list[str] = []
    work_log = log
    if config.cold_holdout_fraction > 0:
        from .evaluate import choose_cold_products
        cold_rng = np.random.default_rng(config.seed + 7919)
        cold_ids = choose_cold_products(catalog, config.cold_holdout_fraction, cold_rng)
        keep = set(catalog.product_ids) - set(cold_ids)
        work_log = log.restricted(keep)
        kept_rows = [i for i, p in enumerate(catalog.product_ids) if p in keep]
        catalog = ProductCatalog(
            [catalog.product_ids[i] for i in kept_rows],
            catalog.prices[kept_rows],
            catalog.attribute_names,
            [[catalog.tokens[k][i] for i in kept_rows]
             for k in range(catalog.n_attributes)],
            quantile_bins=config.quantile_bins,
            numeric_attributes=config.numeric_attributes or None)

    splits = make_splits(work_log, config)
    window = None
    if config.window_start is not None or config.window_end is not None:
        window = (config.window_start, config.window_end)
    graphs = None
    if config.use_propagation:
        graphs = build_graphs(splits.train, catalog, window=window,
                              weighted=config.weighted_edges,
                              decompose_by_attribute=config.decompose_by_attribute)

    by_consumer = splits.train.by_consumer()
    consumer_ids = sorted(by_consumer)
    references = build_references(by_consumer, catalog, config.reference_cap)
    model = ArcRec(catalog, graphs, references, consumer_ids,
                   config.model_config(), init_rng)
    sampler = TripletSampler(splits.train_items, catalog, model.consumer_index)
    val = _build_val_set(splits, catalog, model.consumer_index,
                         config.val_consumers, config.val_candidates, val_rng)
    id_rank = catalog.id_rank()
    optimizer = Adam(model.params(), lr=config.lr)

    n_triplets = len(splits.train)
    history: list[dict] = []
    best_metric = -np.inf
    best_epoch = 0
    best_params = model.snapshot_params()
    stall = 0

    for epoch in range(1, config.max_epochs + 1):
        total_loss = 0.0
        remaining = n_triplets
        batch_no = 0
        while remaining > 0:
            size = min(config.batch_size, remaining)
            remaining -= size
            batch_no += 1
            u, i, j = sampler.sample(size, sample_rng)
            try:
                with Tape() as tape:
                    h_layers, h_star = model.propagated()
                    uniq, inverse = np.unique(u, return_inverse=True)
                    if model.config.use_awtp and model.config.awtp_full_gradient:
                        per_k = model.awtp_tensor(h_layers, uniq)
                        awtp_rows = [ad.gather_rows(col, inverse) for col in per_k]
                    else:
                        h_vals = [h.value for h in h_layers]
                        awtp_rows = model.awtp_matrix(h_vals, uniq)[inverse]
                    pos = model.batch_scores(u, i, i, h_layers, h_star, awtp_rows)
                    negs = model.batch_scores(u, j, i, h_layers, h_star, awtp_rows)
                    loss = bpr_loss(pos, negs, model.params(), config.l2)
                grads = tape.backward(loss)
                optimizer.step(grads)
            except NonFiniteError as e:
                raise RuntimeError(
                    f"training diverged at epoch {epoch}, batch {batch_no}: {e}") from e
            total_loss += loss.item()
        model.invalidate_cache()

        def score_fn(pos_idx, cand):
            return model.score_candidates(pos_idx, cand)

        val_hr, val_ndcg = _val_metric(score_fn, val, id_rank)
        row = {"epoch": epoch, "loss": total_loss / n_triplets,
               "val_hr10": None if np.isnan(val_hr) else val_hr,
               "val_ndcg10": None if np.isnan(val_ndcg) else val_ndcg}
        history.append(row)
        if progress is not None:
            progress(row)

        if np.isnan(val_hr):
            best_epoch = epoch
            best_params = model.snapshot_params()
            continue
        if val_hr > best_metric:
            best_metric = val_hr
            best_epoch = epoch
            best_params = model.snapshot_params()
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    if config.restore_best:
        model.restore_params(best_params)
    model.refresh_eval_cache()
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       splits=splits, sampler=sampler, cold_product_ids=cold_ids)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, result: TrainResult, config: TrainConfig,
                    input_digests: dict[str, str]) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "kind": "arcrec",
        "train_config": asdict(config),
        "consumer_ids": result.model.consumer_ids,
        "product_ids": result.model.catalog.product_ids,
        "attribute_names": result.model.catalog.attribute_names,
        "state": result.model.state_dict(),
        "inputs": input_digests,
        "cold_holdout": result.cold_product_ids,
        "best_epoch": result.best_epoch,
    }
    write_text_atomic(path, json.dumps(jsonable(payload), sort_keys=True) + "\n")


def load_checkpoint(path) -> dict:
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('format_version')}")
    return payload


def rebuild_from_checkpoint(payload: dict, log: TransactionLog,
                            catalog: ProductCatalog) -> tuple[ArcRec, Splits, ProductCatalog]:
    """Reconstruct the trained model deterministically from data + checkpoint.

    The split, graphs and reference sets are re-derived from the
    transactions exactly as during training; learned values come from the
    checkpoint state.
    """
    config = TrainConfig(**payload["train_config"])
    result_stub = _rebuild_structures(payload, log, catalog, config)
    model, splits, reduced = result_stub
    model.load_state(payload["state"])
    model.refresh_eval_cache()
    return model, splits, reduced


def _rebuild_structures(payload, log, catalog, config):
    cold_ids = payload.get("cold_holdout") or []
    work_log = log
    if cold_ids:
        keep = set(catalog.product_ids) - set(cold_ids)
        work_log = log.restricted(keep)
        kept_rows = [i for i, p in enumerate(catalog.product_ids) if p in keep]
        catalog = ProductCatalog(
            [catalog.product_ids[i] for i in kept_rows],
            catalog.prices[kept_rows],
            catalog.attribute_names,
            [[catalog.tokens[k][i] for i in kept_rows]
             for k in range(catalog.n_attributes)],
            quantile_bins=config.quantile_bins,
            numeric_attributes=config.numeric_attributes or None)
    if catalog.product_ids != payload["product_ids"]:
        raise DataError("checkpoint does not match the catalog (product set differs)")
    splits = make_splits(work_log, config)
    window = None
    if config.window_start is not None or config.window_end is not None:
        window = (config.window_start, config.window_end)
    graphs = None
    if config.use_propagation:
        graphs = build_graphs(splits.train, catalog, window=window,
                              weighted=config.weighted_edges,
                              decompose_by_attribute=config.decompose_by_attribute)
    by_consumer = splits.train.by_consumer()
    consumer_ids = sorted(by_consumer)
    if consumer_ids != payload["consumer_ids"]:
        raise DataError("checkpoint does not match the transactions (consumer set differs)")
    references = build_references(by_consumer, catalog, config.reference_cap)
    model = ArcRec(catalog, graphs, references, consumer_ids,
                   config.model_config(), np.random.default_rng(config.seed))
    return model, splits, catalog
