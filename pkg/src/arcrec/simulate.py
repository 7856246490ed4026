"""Synthetic retail market with multinomial-logit consumers.

Products carry three categorical attributes and log-normal prices.
Each consumer has per-attribute-value taste coefficients and a strictly
negative price sensitivity applied to the gap between a product's price
and her reference price (initially the assortment mean, then the running
mean of her own purchases). One product is bought per active period by a
draw from the softmax of noisy utilities; a final noise-free period is
kept aside as ranking ground truth instead of being purchased.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import ProductCatalog, Purchase, TransactionLog
from .metrics import rank_descending


@dataclass
class SimConfig:
    n_consumers: int | None = 300
    n_products: int | None = 300
    paper_scale: bool = False        # draw both sizes from U(1000, 2000)
    n_attributes: int = 3
    level_low: int = 3
    level_high: int = 15
    periods_low: int = 5
    periods_high: int = 25
    noise_var: float = 0.05
    seed: int = 0


@dataclass
class SimMarket:
    config: SimConfig
    product_ids: list[str]
    consumer_ids: list[str]
    prices: np.ndarray                    # (n_products,), > 0
    attr_names: list[str]
    level_counts: list[int]
    attr_codes: np.ndarray                # (K, n_products) ints
    alphas: list[np.ndarray]              # per attribute, (n_consumers, levels)
    betas: np.ndarray                     # (n_consumers,), < 0
    periods: np.ndarray                   # (n_consumers,), active period counts

    @property
    def n_products(self) -> int:
        return len(self.product_ids)

    @property
    def n_consumers(self) -> int:
        return len(self.consumer_ids)

    def to_catalog(self) -> ProductCatalog:
        tokens = [[f"v{code + 1:02d}" for code in self.attr_codes[k]]
                  for k in range(len(self.attr_names))]
        return ProductCatalog(self.product_ids, self.prices, self.attr_names, tokens)

    def deterministic_utilities(self, consumer: int, ref_price: float) -> np.ndarray:
        """Noise-free utilities of every product for one consumer."""
        base = np.zeros(self.n_products)
        for k in range(len(self.attr_names)):
            base += self.alphas[k][consumer, self.attr_codes[k]]
        return base + self.betas[consumer] * (self.prices - ref_price)


def generate_market(config: SimConfig) -> SimMarket:
    if config.paper_scale:
        rng = np.random.default_rng(config.seed)
        n_v = int(rng.integers(1000, 2001))
        n_u = int(rng.integers(1000, 2001))
    else:
        if not config.n_products or not config.n_consumers \
                or config.n_products <= 0 or config.n_consumers <= 0:
            raise ValueError("market sizes must be positive")
        rng = np.random.default_rng(config.seed)
        n_v, n_u = config.n_products, config.n_consumers

    level_counts = [int(rng.integers(config.level_low, config.level_high + 1))
                    for _ in range(config.n_attributes)]
    attr_codes = np.stack([rng.integers(0, c, size=n_v) for c in level_counts])
    prices = np.exp(rng.standard_normal(n_v))
    alphas = [rng.standard_normal((n_u, c)) for c in level_counts]
    betas = -np.exp(rng.standard_normal(n_u))
    periods = rng.integers(config.periods_low, config.periods_high + 1, size=n_u)

    width_v = max(4, len(str(n_v - 1)))
    width_u = max(4, len(str(n_u - 1)))
    return SimMarket(
        config=config,
        product_ids=[f"p{i:0{width_v}d}" for i in range(n_v)],
        consumer_ids=[f"c{i:0{width_u}d}" for i in range(n_u)],
        prices=prices,
        attr_names=[f"a{k + 1}" for k in range(config.n_attributes)],
        level_counts=level_counts,
        attr_codes=attr_codes,
        alphas=alphas,
        betas=betas,
        periods=periods.astype(np.int64),
    )


def choice_probabilities(utilities: np.ndarray) -> np.ndarray:
    """Multinomial-logit choice probabilities; max-shifted, sums to 1."""
    if not np.all(np.isfinite(utilities)):
        raise ValueError("utilities must be finite")
    e = np.exp(utilities - utilities.max())
    return e / e.sum()


@dataclass
class SimTruth:
    """Noise-free test-period utilities, probabilities and rankings."""

    utilities: np.ndarray      # (n_consumers, n_products)
    probabilities: np.ndarray  # (n_consumers, n_products)
    ref_prices: np.ndarray     # (n_consumers,) reference price at test time
    rankings: np.ndarray = field(init=False)  # (n_consumers, n_products) product idx

    def __post_init__(self):
        n_u, n_v = self.utilities.shape
        tie = np.arange(n_v)  # simulator ids are zero-padded, so index order = id order
        self.rankings = np.stack([rank_descending(self.utilities[u], tie)
                                  for u in range(n_u)])


def simulate_periods(market: SimMarket, seed: int) -> tuple[TransactionLog, SimTruth]:
    """Roll the market forward; one purchase per consumer per active period.

    Per-consumer RNG substreams keep consumers independent. Timestamps are
    the per-consumer period indices.
    """
    rng = np.random.default_rng(seed)
    streams = rng.spawn(market.n_consumers)
    noise_std = float(np.sqrt(market.config.noise_var))
    catalog_mean = float(market.prices.mean())

    records: list[Purchase] = []
    utilities = np.empty((market.n_consumers, market.n_products))
    probabilities = np.empty_like(utilities)
    ref_prices = np.empty(market.n_consumers)

    for u in range(market.n_consumers):
        stream = streams[u]
        ref_price = catalog_mean
        paid: list[float] = []
        for t in range(int(market.periods[u])):
            r = market.deterministic_utilities(u, ref_price) \
                + stream.normal(0.0, noise_std, market.n_products)
            probs = choice_probabilities(r)
            choice = int(stream.choice(market.n_products, p=probs))
            records.append(Purchase(market.consumer_ids[u],
                                    market.product_ids[choice], t))
            paid.append(float(market.prices[choice]))
            ref_price = float(np.mean(paid))
        ref_prices[u] = ref_price
        utilities[u] = market.deterministic_utilities(u, ref_price)
        probabilities[u] = choice_probabilities(utilities[u])

    return TransactionLog(records), SimTruth(utilities, probabilities, ref_prices)


def save_truth_csv(market: SimMarket, truth: SimTruth, path) -> None:
    n_v = market.n_products
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["consumer_id", "product_id", "true_utility", "true_prob", "true_rank"])
        for u in range(market.n_consumers):
            rank_of = np.empty(n_v, dtype=np.int64)
            rank_of[truth.rankings[u]] = np.arange(1, n_v + 1)
            for i in range(n_v):
                w.writerow([market.consumer_ids[u], market.product_ids[i],
                            repr(float(truth.utilities[u, i])),
                            repr(float(truth.probabilities[u, i])),
                            int(rank_of[i])])


def load_truth_csv(path) -> dict[str, list[tuple[str, float, float, int]]]:
    """truth.csv rows grouped by consumer, in file order."""
    out: dict[str, list[tuple[str, float, float, int]]] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["consumer_id", "product_id", "true_utility", "true_prob", "true_rank"]
        if header != expected:
            raise ValueError(f"{path}: expected header {','.join(expected)}")
        for row in reader:
            out.setdefault(row[0], []).append(
                (row[1], float(row[2]), float(row[3]), int(row[4])))
    return out


def save_consumers_csv(market: SimMarket, path) -> None:
    """Optional export of ground-truth price sensitivities (treatment grouping)."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["consumer_id", "price_sensitivity", "periods"])
        for u in range(market.n_consumers):
            w.writerow([market.consumer_ids[u],
                        repr(float(market.betas[u])), int(market.periods[u])])
