"""Reference-dependent utility with dual preferences and attribute salience.

A consumer's utility for a target product compares it against her past
purchases (the reference set) on every attribute layer: an interest term
scores the embedding agreement, a price term scales the sticker shock
(reference price minus target price) by a learned, attribute-aware
sensitivity. Reference points are attention-weighted by embedding
similarity, attribute layers by the consumer's willingness-to-pay weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import ProductCatalog
from .graphs import ReferenceGraphs
from .propagation import combine_layers, propagate, propagation_operator

EPS_GUARD = 1e-8


@dataclass
class ModelConfig:
    dim: int = 64
    depth: int = 2
    reference_cap: int = 50
    use_propagation: bool = True        # off: raw embeddings, no message passing
    decompose_by_attribute: bool = True  # off: raw co-purchase network on every layer
    use_awtp: bool = True               # off: uniform attribute weights 1/K
    awtp_full_gradient: bool = False    # on: backprop through the salience weights
    standardize_prices: bool = True
    init_std: float = 0.1
    mlp_init_std: float = 0.3
    activation: str = "tanh"            # sigmoid-family hidden activation
    weighted_edges: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class PreferenceNet:
    """d -> 1 scorer: one hidden layer of width d, linear output.

    The hidden activation is a sigmoid-family squashing function; tanh is
    the default because its centered linear regime couples the output to
    the tiny-magnitude embedding products much faster than the logistic.
    """

    def __init__(self, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor,
                 activation: str = "tanh"):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2
        if activation not in ("tanh", "sigmoid"):
            raise ValueError(f"unknown activation '{activation}'")
        self.activation = activation

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, std: float,
             activation: str = "tanh") -> "PreferenceNet":
        return cls(
            Tensor(rng.normal(0.0, std, size=(dim, dim))),
            Tensor(np.zeros(dim)),
            Tensor(rng.normal(0.0, std, size=dim)),
            Tensor(np.zeros(())),
            activation=activation,
        )

    def __call__(self, x: Tensor) -> Tensor:
        pre = ad.add(ad.matmul(x, self.w1), self.b1)
        hidden = ad.tanh(pre) if self.activation == "tanh" else ad.sigmoid(pre)
        return ad.add(ad.matmul(hidden, self.w2), self.b2)

    def params(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2]


def build_references(purchases_by_consumer: dict[str, list],
                     catalog: ProductCatalog, cap: int) -> dict[str, np.ndarray]:
    """Distinct purchased products per consumer, capped to the most recent.

    Stored ascending by product index for deterministic iteration.
    """
    out = {}
    for consumer, purchases in purchases_by_consumer.items():
        last_seen: dict[int, int] = {}
        for pos, r in enumerate(purchases):
            last_seen[catalog.index[r.product]] = pos
        items = sorted(last_seen, key=lambda p: last_seen[p])  # oldest..newest
        if cap and len(items) > cap:
            items = items[-cap:]
        out[consumer] = np.array(sorted(items), dtype=np.int64)
    return out


@dataclass
class ColdBlock:
    """Representations of products outside the trained node set."""

    product_ids: list[str]
    h_layers: list[np.ndarray]          # per attribute layer, (n_cold, dim)
    prices_model: np.ndarray            # (n_cold,) in model price units
    h_star: np.ndarray = field(init=False)

    def __post_init__(self):
        self.h_star = np.concatenate(self.h_layers, axis=1)


class ArcRec:
    """The trainable model: per-layer embedding tables plus two preference nets."""

    def __init__(self, catalog: ProductCatalog, graphs: ReferenceGraphs | None,
                 references: dict[str, np.ndarray], consumer_ids: list[str],
                 config: ModelConfig, rng: np.random.Generator):
        self.catalog = catalog
        self.config = config
        self.consumer_ids = list(consumer_ids)
        self.consumer_index = {c: i for i, c in enumerate(self.consumer_ids)}
        self.references = [references.get(c, np.empty(0, dtype=np.int64))
                           for c in self.consumer_ids]
        n = len(catalog)
        k = catalog.n_attributes
        if config.standardize_prices:
            mu = float(catalog.prices.mean())
            sigma = float(catalog.prices.std())
            if sigma < 1e-12:
                sigma = 1.0
            self.price_mu, self.price_sigma = mu, sigma
        else:
            self.price_mu, self.price_sigma = 0.0, 1.0
        self.prices_model = (catalog.prices - self.price_mu) / self.price_sigma

        self.operators = None
        if config.use_propagation:
            if graphs is None:
                raise ValueError("propagation requires built graphs")
            self.operators = [propagation_operator(layer, weighted=config.weighted_edges)
                              for layer in graphs.layers]
        self.embeddings = [Tensor(rng.normal(0.0, config.init_std, size=(n, config.dim)))
                           for _ in range(k)]
        self.mlp_alpha = PreferenceNet.init(config.dim, rng, config.mlp_init_std,
                                            config.activation)
        self.mlp_beta = PreferenceNet.init(config.dim, rng, config.mlp_init_std,
                                           config.activation)
        self._eval_cache: tuple[list[np.ndarray], np.ndarray, np.ndarray] | None = None

    # -- basic accessors ----------------------------------------------------

    @property
    def n_products(self) -> int:
        return len(self.catalog)

    @property
    def n_attributes(self) -> int:
        return self.catalog.n_attributes

    def params(self) -> list[Tensor]:
        return list(self.embeddings) + self.mlp_alpha.params() + self.mlp_beta.params()

    def model_price(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=np.float64) - self.price_mu) / self.price_sigma

    def references_of(self, consumer_pos: int) -> np.ndarray:
        return self.references[consumer_pos]

    # -- representation -----------------------------------------------------

    def propagated(self) -> tuple[list[Tensor], Tensor]:
        """Per-layer representations and their concatenation; taped when a
        tape is active."""
        if self.config.use_propagation:
            h_layers = [combine_layers(propagate(op, e, self.config.depth))
                        for op, e in zip(self.operators, self.embeddings)]
        else:
            h_layers = list(self.embeddings)
        h_star = ad.concat(h_layers, axis=1)
        return h_layers, h_star

    def refresh_eval_cache(self) -> None:
        h_layers, h_star = self.propagated()
        h_vals = [h.value for h in h_layers]
        awtp = self.awtp_matrix(h_vals, np.arange(len(self.consumer_ids)))
        self._eval_cache = (h_vals, h_star.value, awtp)

    def eval_cache(self) -> tuple[list[np.ndarray], np.ndarray, np.ndarray]:
        if self._eval_cache is None:
            self.refresh_eval_cache()
        return self._eval_cache

    def invalidate_cache(self) -> None:
        self._eval_cache = None

    # -- willingness-to-pay ---------------------------------------------------

    def consumer_center(self, consumer_pos: int,
                        h_values: list[np.ndarray]) -> tuple[list[np.ndarray], float]:
        refs = self.references[consumer_pos]
        if len(refs) == 0:
            raise ValueError(f"consumer {self.consumer_ids[consumer_pos]} has no references")
        centers = [h[refs].mean(axis=0) for h in h_values]
        return centers, float(self.prices_model[refs].mean())

    def raw_awtp_row(self, consumer_pos: int, h_values: list[np.ndarray]) -> np.ndarray:
        """Unnormalized per-attribute price-tolerance scores for one consumer."""
        refs = self.references[consumer_pos]
        centers, pbar = self.consumer_center(consumer_pos, h_values)
        prices = self.prices_model[refs]
        price_dev = np.abs(prices - pbar) / max(abs(pbar), EPS_GUARD)
        row = np.zeros(self.n_attributes)
        for k, h in enumerate(h_values):
            hbar = centers[k]
            hnorm = float(np.linalg.norm(hbar))
            if hnorm == 0.0:
                continue
            emb_dev = np.maximum(np.linalg.norm(h[refs] - hbar, axis=1), EPS_GUARD)
            row[k] = float(np.sum(price_dev * hnorm / emb_dev))
        return row

    def awtp_matrix(self, h_values: list[np.ndarray], consumer_pos: np.ndarray) -> np.ndarray:
        """Normalized salience weights per consumer; rows sum to 1.

        Detached from the gradient tape. With the salience module disabled
        the rows are uniform.
        """
        k = self.n_attributes
        m = len(consumer_pos)
        if not self.config.use_awtp:
            return np.full((m, k), 1.0 / k)
        out = np.empty((m, k))
        for r, u in enumerate(consumer_pos):
            raw = self.raw_awtp_row(int(u), h_values)
            e = np.exp(raw - raw.max())
            out[r] = e / e.sum()
        return out

    def awtp_tensor(self, h_layers: list[Tensor], consumer_pos: np.ndarray) -> list[Tensor]:
        """Taped variant of the salience weights.

        Returns one tensor per attribute, each aligned with ``consumer_pos``.
        """
        cols: list[list[Tensor]] = []
        for u in consumer_pos:
            refs = self.references[int(u)]
            prices = self.prices_model[refs]
            pbar = float(prices.mean())
            price_dev = np.abs(prices - pbar) / max(abs(pbar), EPS_GUARD)
            scores = []
            for h in h_layers:
                rows = ad.gather_rows(h, refs)
                hbar = ad.scale(ad.tsum(rows, axis=0), 1.0 / len(refs))
                hnorm = ad.norm(hbar)
                if hnorm.item() == 0.0:
                    scores.append(Tensor(0.0))
                    continue
                diffs = ad.sub(rows, hbar)
                emb_dev = ad.sqrt(ad.clip_min(ad.tsum(ad.mul(diffs, diffs), axis=1),
                                              EPS_GUARD * EPS_GUARD))
                terms = ad.div(ad.mul(Tensor(price_dev), hnorm), emb_dev)
                scores.append(ad.tsum(terms))
            cols.append([ad.element(ad.softmax(ad.vector_of(scores)), k)
                         for k in range(self.n_attributes)])
        return [ad.vector_of([cols[r][k] for r in range(len(consumer_pos))])
                for k in range(self.n_attributes)]

    # -- utility ------------------------------------------------------------

    def attention_weights(self, target_pos: int, ref_idx: np.ndarray, h_star: Tensor) -> Tensor:
        """Softmax similarity of one target to each reference product."""
        if len(ref_idx) == 0:
            raise ValueError("empty reference set")
        tgt = ad.gather_rows(h_star, np.full(len(ref_idx), target_pos, dtype=np.int64))
        refs = ad.gather_rows(h_star, ref_idx)
        logits = ad.tsum(ad.mul(tgt, refs), axis=1)
        return ad.softmax(logits)

    def pair_utility(self, k: int, target_pos: int, ref_pos: int,
                     h_layers: list[Tensor],
                     target_price_model: float | None = None) -> Tensor:
        """Single-attribute comparison of a target against one reference point."""
        h = h_layers[k]
        hi = ad.gather_rows(h, np.array([target_pos]))
        hj = ad.gather_rows(h, np.array([ref_pos]))
        x = ad.mul(hi, hj)
        p_i = (self.prices_model[target_pos] if target_price_model is None
               else target_price_model)
        dp = float(self.prices_model[ref_pos] - p_i)
        f = ad.add(self.mlp_alpha(x), ad.scale(self.mlp_beta(x), dp))
        return ad.tsum(f)

    def _ref_blocks(self, consumer_pos: np.ndarray, exclude: np.ndarray | None):
        """Flattened reference rows for a batch of samples."""
        parts = []
        seg_parts = []
        for s, u in enumerate(consumer_pos):
            refs = self.references[int(u)]
            if exclude is not None:
                e = exclude[s]
                pos = np.searchsorted(refs, e)
                if pos < len(refs) and refs[pos] == e:
                    refs = np.delete(refs, pos)
            if len(refs) == 0:
                raise ValueError(
                    f"consumer {self.consumer_ids[int(u)]} has an empty reference set "
                    "after excluding the target")
            parts.append(refs)
            seg_parts.append(np.full(len(refs), s, dtype=np.int64))
        return np.concatenate(parts), np.concatenate(seg_parts)

    def batch_scores(self, consumer_pos: np.ndarray, target_pos: np.ndarray,
                     exclude: np.ndarray | None,
                     h_layers: list[Tensor], h_star: Tensor,
                     awtp_rows,
                     target_tables: tuple[list, "Tensor | list[np.ndarray]", np.ndarray] | None = None,
                     want_price_slope: bool = False):
        """Utilities for (consumer, target) samples, vectorized over all
        reference comparisons.

        ``awtp_rows`` is either a per-sample (S, K) constant array or a list
        of K taped per-sample weight vectors. ``target_tables`` overrides
        where target rows come from (cold-start scoring); references always
        come from the trained tables. Returns the score tensor, plus the
        per-sample derivative of the score in the target's model-price when
        requested (evaluation only).
        """
        n_samples = len(consumer_pos)
        ref_idx, seg = self._ref_blocks(consumer_pos, exclude)
        tgt_of_ref = target_pos[seg]

        if target_tables is None:
            tgt_h_layers, tgt_h_star, tgt_prices = h_layers, h_star, self.prices_model
        else:
            tgt_h_layers, tgt_h_star, tgt_prices = target_tables

        # attention over reference points, shifted by a detached per-sample max
        tgt_rows = ad.gather_rows(tgt_h_star, tgt_of_ref)
        ref_rows = ad.gather_rows(h_star, ref_idx)
        logits = ad.tsum(ad.mul(tgt_rows, ref_rows), axis=1)
        seg_max = np.full(n_samples, -np.inf)
        np.maximum.at(seg_max, seg, logits.value)
        z = ad.exp(ad.sub(logits, seg_max[seg]))
        totals = ad.segment_sum(z, seg, n_samples)
        gamma = ad.div(z, ad.gather_rows(totals, seg))

        dp = self.prices_model[ref_idx] - tgt_prices[tgt_of_ref]
        acc = None
        slope_acc = np.zeros(len(ref_idx)) if want_price_slope else None
        for k in range(self.n_attributes):
            x = ad.mul(ad.gather_rows(tgt_h_layers[k], tgt_of_ref),
                       ad.gather_rows(h_layers[k], ref_idx))
            a_out = self.mlp_alpha(x)
            b_out = self.mlp_beta(x)
            f_k = ad.add(a_out, ad.mul(b_out, dp))
            if isinstance(awtp_rows, np.ndarray):
                coef = awtp_rows[seg, k]
            else:
                coef = ad.gather_rows(awtp_rows[k], seg)
            term = ad.mul(f_k, coef)
            acc = term if acc is None else ad.add(acc, term)
            if want_price_slope:
                c = coef if isinstance(coef, np.ndarray) else coef.value
                slope_acc += c * b_out.value
        scores = ad.segment_sum(ad.mul(gamma, acc), seg, n_samples)
        if not want_price_slope:
            return scores
        slope = -np.bincount(seg, weights=gamma.value * slope_acc, minlength=n_samples)
        return scores, slope

    # -- evaluation-mode scoring ---------------------------------------------

    def score_candidates(self, consumer_pos: int, candidate_pos: np.ndarray,
                         price_override: np.ndarray | None = None,
                         want_price_slope: bool = False):
        """Utilities of catalog products for one consumer, no gradients.

        ``price_override`` replaces the raw target-price vector (same length
        as the catalog) before the stored standardization; reference-side
        prices stay at their historical values. The returned slope is per
        unit of raw target price.
        """
        h_vals, h_star_val, awtp = self.eval_cache()
        h_layers = [Tensor(h) for h in h_vals]
        h_star = Tensor(h_star_val)
        target_tables = None
        if price_override is not None:
            target_tables = (h_layers, h_star, self.model_price(price_override))
        u = np.full(len(candidate_pos), consumer_pos, dtype=np.int64)
        rows = awtp[np.full(len(candidate_pos), consumer_pos)]
        out = self.batch_scores(u, candidate_pos, candidate_pos, h_layers, h_star,
                                rows, target_tables=target_tables,
                                want_price_slope=want_price_slope)
        if want_price_slope:
            scores, slope = out
            return scores.value, slope / self.price_sigma
        return out.value

    def cold_block(self, product_ids: list[str], attribute_tokens: list[list[str]],
                   raw_prices: np.ndarray) -> ColdBlock:
        """Representations for products never seen in training, from
        attribute-matched neighbors."""
        from .graphs import attach_cold_node
        from .propagation import cold_embedding
        h_vals, _, _ = self.eval_cache()
        rows_per_layer: list[list[np.ndarray]] = [[] for _ in range(self.n_attributes)]
        for tokens in attribute_tokens:
            neighbor_sets = attach_cold_node(self.catalog, tokens)
            for k in range(self.n_attributes):
                rows_per_layer[k].append(cold_embedding(h_vals[k], neighbor_sets[k]))
        h_layers = [np.vstack(rows) for rows in rows_per_layer]
        return ColdBlock(product_ids=list(product_ids), h_layers=h_layers,
                         prices_model=self.model_price(raw_prices))

    def score_cold(self, consumer_pos: int, cold: ColdBlock,
                   want_price_slope: bool = False):
        """Utilities of cold products for one consumer."""
        h_vals, h_star_val, awtp = self.eval_cache()
        h_layers = [Tensor(h) for h in h_vals]
        h_star = Tensor(h_star_val)
        tgt_tables = ([Tensor(h) for h in cold.h_layers], Tensor(cold.h_star),
                      cold.prices_model)
        n = len(cold.product_ids)
        u = np.full(n, consumer_pos, dtype=np.int64)
        targets = np.arange(n, dtype=np.int64)
        rows = awtp[np.full(n, consumer_pos)]
        out = self.batch_scores(u, targets, None, h_layers, h_star, rows,
                                target_tables=tgt_tables,
                                want_price_slope=want_price_slope)
        if want_price_slope:
            scores, slope = out
            return scores.value, slope / self.price_sigma
        return out.value

    def sensitivity_proxy(self) -> dict[str, float]:
        """Mean learned price-sensitivity output per consumer, from the
        beta network applied to all pairs of her reference products. Used
        to group consumers when no external sensitivity exists."""
        h_vals, _, _ = self.eval_cache()
        out: dict[str, float] = {}
        for pos, cid in enumerate(self.consumer_ids):
            refs = self.references[pos]
            if len(refs) == 0:
                continue
            acc = 0.0
            for k in range(self.n_attributes):
                rows = h_vals[k][refs]
                x = np.repeat(rows, len(refs), axis=0) * np.tile(rows, (len(refs), 1))
                b = self.mlp_beta(Tensor(x)).value
                acc += float(b.mean())
            out[cid] = acc / self.n_attributes
        return out

    # -- persistence ----------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "embeddings": [e.value.tolist() for e in self.embeddings],
            "mlp_alpha": [p.value.tolist() for p in self.mlp_alpha.params()],
            "mlp_beta": [p.value.tolist() for p in self.mlp_beta.params()],
            "price_mu": self.price_mu,
            "price_sigma": self.price_sigma,
        }

    def load_state(self, state: dict) -> None:
        for e, v in zip(self.embeddings, state["embeddings"]):
            e.value = np.asarray(v, dtype=np.float64)
        for p, v in zip(self.mlp_alpha.params(), state["mlp_alpha"]):
            p.value = np.asarray(v, dtype=np.float64)
        for p, v in zip(self.mlp_beta.params(), state["mlp_beta"]):
            p.value = np.asarray(v, dtype=np.float64)
        self.price_mu = float(state["price_mu"])
        self.price_sigma = float(state["price_sigma"])
        self.invalidate_cache()

    def snapshot_params(self) -> list[np.ndarray]:
        return [p.value.copy() for p in self.params()]

    def restore_params(self, snapshot: list[np.ndarray]) -> None:
        for p, v in zip(self.params(), snapshot):
            p.value = v.copy()
        self.invalidate_cache()
