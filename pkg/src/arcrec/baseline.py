"""Plain matrix-factorization baseline trained with the same pairwise loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tape, Tensor
from .data import ProductCatalog, TransactionLog
from .evaluate import Splits
from .optim import Adam
from .training import TrainConfig, TripletSampler, _build_val_set, _val_metric, \
    bpr_loss, make_splits


class BprMf:
    """Inner-product scores between consumer and product embeddings.

    Quacks like the main model where evaluation needs it: ``catalog``,
    ``consumer_index`` and ``references_of`` (training interactions).
    """

    def __init__(self, consumer_ids: list[str], catalog: ProductCatalog, dim: int,
                 rng: np.random.Generator, init_std: float = 0.1):
        self.consumer_ids = list(consumer_ids)
        self.catalog = catalog
        self.consumer_index = {c: i for i, c in enumerate(self.consumer_ids)}
        self.user_emb = Tensor(rng.normal(0.0, init_std, size=(len(consumer_ids), dim)))
        self.item_emb = Tensor(rng.normal(0.0, init_std, size=(len(catalog), dim)))
        self._references: list[np.ndarray] = [np.empty(0, dtype=np.int64)
                                              for _ in consumer_ids]

    def set_references(self, references: dict[str, np.ndarray]) -> None:
        self._references = [references.get(c, np.empty(0, dtype=np.int64))
                            for c in self.consumer_ids]

    def references_of(self, consumer_pos: int) -> np.ndarray:
        return self._references[consumer_pos]

    def params(self) -> list[Tensor]:
        return [self.user_emb, self.item_emb]

    def batch_scores(self, consumer_pos: np.ndarray, target_pos: np.ndarray) -> Tensor:
        users = ad.gather_rows(self.user_emb, consumer_pos)
        items = ad.gather_rows(self.item_emb, target_pos)
        return ad.tsum(ad.mul(users, items), axis=1)

    def score_candidates(self, consumer_pos: int, candidate_pos: np.ndarray) -> np.ndarray:
        return self.item_emb.value[candidate_pos] @ self.user_emb.value[consumer_pos]

    def score_with_slope(self, consumer_pos: int, candidate_pos: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray]:
        """Price never enters the score, so the slope is identically zero."""
        s = self.score_candidates(consumer_pos, candidate_pos)
        return s, np.zeros_like(s)


@dataclass
class BaselineResult:
    model: BprMf
    history: list[dict]
    best_epoch: int
    splits: Splits


def train_bprmf(log: TransactionLog, catalog: ProductCatalog,
                config: TrainConfig) -> BaselineResult:
    """Same splits, sampler, loss, optimizer and early stopping as the
    main model; only the score function differs."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    init_rng, sample_rng, val_rng = rng.spawn(3)

    splits = make_splits(log, config)
    by_consumer = splits.train.by_consumer()
    consumer_ids = sorted(by_consumer)
    model = BprMf(consumer_ids, catalog, config.dim, init_rng)
    from .model import build_references
    model.set_references(build_references(by_consumer, catalog,
                                          config.reference_cap))
    sampler = TripletSampler(splits.train_items, catalog, model.consumer_index)
    val = _build_val_set(splits, catalog, model.consumer_index,
                         config.val_consumers, config.val_candidates, val_rng)
    id_rank = catalog.id_rank()
    optimizer = Adam(model.params(), lr=config.lr)

    n_triplets = len(splits.train)
    history = []
    best_metric = -np.inf
    best_epoch = 0
    best_params = [p.value.copy() for p in model.params()]
    stall = 0
    for epoch in range(1, config.max_epochs + 1):
        total_loss = 0.0
        remaining = n_triplets
        while remaining > 0:
            size = min(config.batch_size, remaining)
            remaining -= size
            u, i, j = sampler.sample(size, sample_rng)
            try:
                with Tape() as tape:
                    pos = model.batch_scores(u, i)
                    negs = model.batch_scores(u, j)
                    loss = bpr_loss(pos, negs, model.params(), config.l2)
                grads = tape.backward(loss)
                optimizer.step(grads)
            except NonFiniteError as e:
                raise RuntimeError(f"baseline diverged at epoch {epoch}: {e}") from e
            total_loss += loss.item()

        val_hr, val_ndcg = _val_metric(model.score_candidates, val, id_rank)
        history.append({"epoch": epoch, "loss": total_loss / n_triplets,
                        "val_hr10": None if np.isnan(val_hr) else val_hr,
                        "val_ndcg10": None if np.isnan(val_ndcg) else val_ndcg})
        if np.isnan(val_hr):
            best_epoch = epoch
            best_params = [p.value.copy() for p in model.params()]
            continue
        if val_hr > best_metric:
            best_metric = val_hr
            best_epoch = epoch
            best_params = [p.value.copy() for p in model.params()]
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break
    for p, v in zip(model.params(), best_params):
        p.value = v.copy()
    return BaselineResult(model=model, history=history, best_epoch=best_epoch,
                          splits=splits)
