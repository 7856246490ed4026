"""Transaction and catalog ingestion.

File formats:
  transactions CSV: header ``consumer_id,product_id,timestamp`` (integer seconds)
  catalog CSV:      header ``product_id,price,<attr_1>,...,<attr_K>``
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Purchase:
    consumer: str
    product: str
    timestamp: int


class TransactionLog:
    """Time-ordered purchase records, canonically sorted."""

    def __init__(self, records: Iterable[Purchase]):
        self.records: list[Purchase] = sorted(
            records, key=lambda r: (r.timestamp, r.consumer, r.product))

    def __len__(self):
        return len(self.records)

    def consumers(self) -> list[str]:
        return sorted({r.consumer for r in self.records})

    def by_consumer(self) -> dict[str, list[Purchase]]:
        out: dict[str, list[Purchase]] = {}
        for r in self.records:
            out.setdefault(r.consumer, []).append(r)
        return out

    def restricted(self, keep_products: set[str]) -> "TransactionLog":
        return TransactionLog(r for r in self.records if r.product in keep_products)

    def window(self, start: int | None, end: int | None) -> "TransactionLog":
        """Half-open time range [start, end)."""
        sub = [r for r in self.records
               if (start is None or r.timestamp >= start)
               and (end is None or r.timestamp < end)]
        if not sub:
            raise DataError("window selects no transactions")
        return TransactionLog(sub)

    @classmethod
    def load_csv(cls, path) -> "TransactionLog":
        records = []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != ["consumer_id", "product_id", "timestamp"]:
                raise DataError(
                    f"{path}: expected header consumer_id,product_id,timestamp, got {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 3:
                    raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
                try:
                    ts = int(row[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: timestamp '{row[2]}' is not an integer")
                records.append(Purchase(row[0], row[1], ts))
        if not records:
            raise DataError(f"{path}: no transactions")
        return cls(records)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["consumer_id", "product_id", "timestamp"])
            for r in self.records:
                w.writerow([r.consumer, r.product, r.timestamp])


@dataclass
class AttributeCoder:
    """Maps raw attribute tokens to equivalence-level codes.

    Categorical: exact token equality. Numeric (every token parses as a
    float): quantile-binned into ``bins`` levels; the bin edges are kept so
    unseen products can be coded consistently.
    """

    kind: str                      # "cat" | "num"
    mapping: dict[str, int] | None = None
    edges: np.ndarray | None = None

    def code(self, token: str) -> int | None:
        """Level code for a token; None when the level is unseen."""
        if self.kind == "cat":
            return self.mapping.get(token)
        try:
            v = float(token)
        except ValueError:
            return None
        return int(np.searchsorted(self.edges, v, side="right"))

    @property
    def n_levels(self) -> int:
        if self.kind == "cat":
            return len(self.mapping)
        return len(self.edges) + 1


def _build_coder(tokens: Sequence[str], bins: int, force_numeric: bool | None) -> AttributeCoder:
    numeric = force_numeric
    if numeric is None:
        try:
            [float(t) for t in tokens]
            numeric = True
        except ValueError:
            numeric = False
    if numeric:
        vals = np.array([float(t) for t in tokens])
        qs = [i / bins for i in range(1, bins)]
        edges = np.unique(np.quantile(vals, qs))
        return AttributeCoder(kind="num", edges=edges)
    levels = sorted(set(tokens))
    return AttributeCoder(kind="cat", mapping={t: i for i, t in enumerate(levels)})


class ProductCatalog:
    """Products with prices and K categorical attribute slots.

    Products keep the file/row order; ``index`` maps product_id -> row.
    ``level_codes[k]`` holds the per-product equivalence level for
    attribute k after any quantile binning.
    """

    def __init__(self, product_ids: Sequence[str], prices: Sequence[float],
                 attribute_names: Sequence[str], attribute_tokens: Sequence[Sequence[str]],
                 quantile_bins: int = 5, numeric_attributes: Sequence[str] | None = None):
        self.product_ids = list(product_ids)
        if len(set(self.product_ids)) != len(self.product_ids):
            raise DataError("duplicate product_id in catalog")
        self.prices = np.asarray(prices, dtype=np.float64)
        if np.any(self.prices <= 0):
            bad = self.product_ids[int(np.argmax(self.prices <= 0))]
            raise DataError(f"non-positive price for product {bad}")
        self.attribute_names = list(attribute_names)
        if not self.attribute_names:
            raise DataError("catalog needs at least one attribute column")
        self.tokens = [list(col) for col in attribute_tokens]  # per attribute, per product
        self.index = {pid: i for i, pid in enumerate(self.product_ids)}
        forced = set(numeric_attributes or [])
        self.coders = [
            _build_coder(col, quantile_bins, True if name in forced else None)
            for name, col in zip(self.attribute_names, self.tokens)
        ]
        self.level_codes = np.stack([
            np.array([coder.code(t) for t in col], dtype=np.int64)
            for coder, col in zip(self.coders, self.tokens)
        ])

    def __len__(self):
        return len(self.product_ids)

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_names)

    def id_rank(self) -> np.ndarray:
        """Rank of each product under ascending product_id (tie-break order)."""
        order = sorted(range(len(self.product_ids)), key=lambda i: self.product_ids[i])
        rank = np.empty(len(order), dtype=np.int64)
        for r, i in enumerate(order):
            rank[i] = r
        return rank

    def encode_attributes(self, tokens: Sequence[str]) -> list[int | None]:
        if len(tokens) != self.n_attributes:
            raise DataError(
                f"expected {self.n_attributes} attribute values, got {len(tokens)}")
        return [coder.code(t) for coder, t in zip(self.coders, tokens)]

    @classmethod
    def load_csv(cls, path, quantile_bins: int = 5,
                 numeric_attributes: Sequence[str] | None = None) -> "ProductCatalog":
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if not header or len(header) < 3 or header[0] != "product_id" or header[1] != "price":
                raise DataError(
                    f"{path}: expected header product_id,price,<attributes...>, got {header}")
            attr_names = header[2:]
            ids, prices = [], []
            cols: list[list[str]] = [[] for _ in attr_names]
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise DataError(
                        f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                ids.append(row[0])
                try:
                    prices.append(float(row[1]))
                except ValueError:
                    raise DataError(f"{path}:{lineno}: price '{row[1]}' is not a number")
                for k, tok in enumerate(row[2:]):
                    cols[k].append(tok)
        if not ids:
            raise DataError(f"{path}: empty catalog")
        return cls(ids, prices, attr_names, cols,
                   quantile_bins=quantile_bins, numeric_attributes=numeric_attributes)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["product_id", "price"] + self.attribute_names)
            for i, pid in enumerate(self.product_ids):
                w.writerow([pid, repr(float(self.prices[i]))]
                           + [self.tokens[k][i] for k in range(self.n_attributes)])
