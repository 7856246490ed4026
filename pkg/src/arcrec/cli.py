"""Command-line surface: simulate, train, evaluate, recommend, awtp, graphs.

Every command is deterministic under a fixed seed and config; artifacts
are written atomically, and each CSV artifact gets a JSON sidecar carrying
the effective configuration plus input digests (JSON artifacts embed them
directly).

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .config import ConfigError, load_config, set_path, sim_config_from, \
    train_config_from, treatment_config_from
from .data import DataError, ProductCatalog, TransactionLog
from .evaluate import cold_start_eval, correlation_eval, sensitivity_pools, \
    standard_eval, treatment_experiment
from .graphs import build_graphs
from .ioutils import jsonable, sha256_file, write_json_atomic, write_text_atomic
from .metrics import rank_descending
from .simulate import generate_market, load_truth_csv, simulate_periods
from .training import load_checkpoint, rebuild_from_checkpoint, save_checkpoint, \
    train_arcrec


def _atomic_csv(write_fn, path) -> None:
    buf = io.StringIO()
    write_fn(buf)
    write_text_atomic(path, buf.getvalue())


def _load_inputs(config, args):
    t_path = getattr(args, "transactions", None) or config["paths"]["transactions"]
    c_path = getattr(args, "catalog", None) or config["paths"]["catalog"]
    if not t_path or not c_path:
        raise ConfigError("both --transactions and --catalog are required")
    log = TransactionLog.load_csv(t_path)
    catalog = ProductCatalog.load_csv(
        c_path, quantile_bins=config["train"]["quantile_bins"],
        numeric_attributes=config["train"]["numeric_attributes"] or None)
    digests = {"transactions": sha256_file(t_path), "catalog": sha256_file(c_path)}
    return log, catalog, digests, t_path, c_path


def _meta_sidecar(path, config, inputs, outputs) -> None:
    write_json_atomic(path, {"config": config, "inputs": inputs,
                             "outputs": outputs})


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args, config) -> int:
    for flag, key in (("consumers", "simulate.consumers"),
                      ("products", "simulate.products")):
        v = getattr(args, flag)
        if v is not None:
            set_path(config, key, v)
    if args.paper_scale:
        set_path(config, "simulate.paper_scale", True)
    out_dir = args.out or config["paths"]["output_dir"]
    os.makedirs(out_dir, exist_ok=True)

    market = generate_market(sim_config_from(config))
    log, truth = simulate_periods(market, seed=config["seed"] + 1)
    catalog = market.to_catalog()

    t_path = os.path.join(out_dir, "transactions.csv")
    c_path = os.path.join(out_dir, "catalog.csv")
    u_path = os.path.join(out_dir, "truth.csv")
    _atomic_csv(lambda f: _write_log(log, f), t_path)
    _atomic_csv(lambda f: _write_catalog(catalog, f), c_path)
    _atomic_csv(lambda f: _write_truth(market, truth, f), u_path)
    outputs = {"transactions": sha256_file(t_path),
               "catalog": sha256_file(c_path),
               "truth": sha256_file(u_path)}
    if args.consumers_out:
        _atomic_csv(lambda f: _write_consumers(market, f), args.consumers_out)
        outputs["consumers"] = sha256_file(args.consumers_out)
    _meta_sidecar(os.path.join(out_dir, "simulate.meta.json"),
                  config, {}, outputs)
    print(f"wrote {t_path} ({len(log)} purchases), {c_path} "
          f"({len(catalog)} products), {u_path}")
    return 0


def _write_log(log, f):
    w = csv.writer(f)
    w.writerow(["consumer_id", "product_id", "timestamp"])
    for r in log.records:
        w.writerow([r.consumer, r.product, r.timestamp])


def _write_catalog(catalog, f):
    w = csv.writer(f)
    w.writerow(["product_id", "price"] + catalog.attribute_names)
    for i, pid in enumerate(catalog.product_ids):
        w.writerow([pid, repr(float(catalog.prices[i]))]
                   + [catalog.tokens[k][i] for k in range(catalog.n_attributes)])


def _write_truth(market, truth, f):
    w = csv.writer(f)
    w.writerow(["consumer_id", "product_id", "true_utility", "true_prob", "true_rank"])
    n_v = market.n_products
    for u in range(market.n_consumers):
        rank_of = np.empty(n_v, dtype=np.int64)
        rank_of[truth.rankings[u]] = np.arange(1, n_v + 1)
        for i in range(n_v):
            w.writerow([market.consumer_ids[u], market.product_ids[i],
                        repr(float(truth.utilities[u, i])),
                        repr(float(truth.probabilities[u, i])),
                        int(rank_of[i])])


def _write_consumers(market, f):
    w = csv.writer(f)
    w.writerow(["consumer_id", "price_sensitivity", "periods"])
    for u in range(market.n_consumers):
        w.writerow([market.consumer_ids[u], repr(float(market.betas[u])),
                    int(market.periods[u])])


def cmd_train(args, config) -> int:
    _apply_train_flags(args, config)
    log, catalog, digests, *_ = _load_inputs(config, args)
    train_cfg = train_config_from(config)

    def progress(row):
        print(f"epoch {row['epoch']}: loss {row['loss']:.6f} "
              f"val_hr10 {row['val_hr10']}", file=sys.stderr)

    result = train_arcrec(log, catalog, train_cfg, progress=progress)
    ckpt_path = args.out or config["paths"]["checkpoint"]
    if not ckpt_path:
        raise ConfigError("--out (checkpoint path) is required")
    save_checkpoint(ckpt_path, result, train_cfg, digests)
    if args.log_out:
        write_text_atomic(args.log_out, result.history_jsonl())
    if args.embeddings_out:
        _atomic_csv(lambda f: _write_embeddings(result.model, f),
                    args.embeddings_out)
    _meta_sidecar(ckpt_path + ".meta.json", config, digests,
                  {"checkpoint": sha256_file(ckpt_path),
                   "best_epoch": result.best_epoch})
    print(f"wrote {ckpt_path} (best epoch {result.best_epoch}, "
          f"{len(result.history)} epochs)")
    return 0


def _apply_train_flags(args, config):
    mapping = {
        "dim": "train.dim", "depth": "train.depth", "epochs": "train.max_epochs",
        "batch_size": "train.batch_size", "lr": "train.lr", "l2": "train.l2",
        "patience": "train.patience", "split_mode": "train.split_mode",
        "cold_holdout_fraction": "train.cold_holdout_fraction",
    }
    for flag, key in mapping.items():
        v = getattr(args, flag, None)
        if v is not None:
            set_path(config, key, v)
    if getattr(args, "no_awtp", False):
        set_path(config, "train.use_awtp", False)
    if getattr(args, "no_propagation", False):
        set_path(config, "train.use_propagation", False)
    if getattr(args, "no_decompose", False):
        set_path(config, "train.decompose_by_attribute", False)
    if getattr(args, "raw_prices", False):
        set_path(config, "train.standardize_prices", False)


def _write_embeddings(model, f):
    w = csv.writer(f)
    dim = model.config.dim
    w.writerow(["layer", "product_id"] + [f"v_{i}" for i in range(dim)])
    h_vals, _, _ = model.eval_cache()
    for k, name in enumerate(model.catalog.attribute_names):
        for i, pid in enumerate(model.catalog.product_ids):
            w.writerow([name, pid] + [repr(float(x)) for x in h_vals[k][i]])


def _load_model(args, config):
    ckpt_path = args.checkpoint or config["paths"]["checkpoint"]
    if not ckpt_path:
        raise ConfigError("--checkpoint is required")
    payload = load_checkpoint(ckpt_path)
    # the rebuilt model is governed by the checkpoint's training config;
    # echo that configuration, not the local defaults
    saved = dict(payload["train_config"])
    saved.pop("seed", None)
    config["train"].update(saved)
    log, catalog, digests, *_ = _load_inputs(config, args)
    if payload["inputs"].get("catalog") != digests["catalog"]:
        raise DataError("catalog file does not match the checkpoint digest")
    if payload["inputs"].get("transactions") != digests["transactions"]:
        raise DataError("transactions file does not match the checkpoint digest")
    model, splits, reduced_catalog = rebuild_from_checkpoint(payload, log, catalog)
    digests["checkpoint"] = sha256_file(ckpt_path)
    return payload, model, splits, log, catalog, digests


def cmd_evaluate(args, config) -> int:
    payload, model, splits, log, catalog, digests = _load_model(args, config)
    workers = config["workers"]
    mode = args.mode
    if mode == "standard":
        report = standard_eval(model, splits, config["evaluate"]["ks_standard"],
                               workers=workers)
    elif mode == "coldstart":
        cold_ids = payload.get("cold_holdout") or []
        if not cold_ids:
            raise DataError("checkpoint was trained without a cold-start holdout")
        report = cold_start_eval(model, catalog, cold_ids, log,
                                 config["evaluate"]["ks_cold"])
    elif mode == "correlation":
        truth_path = args.truth or config["paths"]["truth"]
        if not truth_path:
            raise DataError("correlation mode requires --truth")
        digests["truth"] = sha256_file(truth_path)
        report = _correlation_report(model, truth_path, workers)
    elif mode == "treatment":
        report = _treatment_report(args, config, model, catalog)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown mode {mode}")

    out = args.out or os.path.join(config["paths"]["output_dir"],
                                   f"report_{mode}.json")
    write_json_atomic(out, {"mode": mode, "config": config,
                            "inputs": digests, "report": jsonable(report)})
    if mode == "treatment" and args.rows_out:
        _atomic_csv(lambda f: _write_treatment_rows(report["rows"], f),
                    args.rows_out)
    print(f"wrote {out}")
    return 0


def _correlation_report(model, truth_path, workers):
    truth = load_truth_csv(truth_path)
    rankings = {}
    for consumer, rows in truth.items():
        if len(rows) != len(model.catalog):
            raise DataError(
                f"truth file covers {len(rows)} products for {consumer}, "
                f"expected {len(model.catalog)}")
        ordered = sorted(rows, key=lambda r: r[3])
        rankings[consumer] = [model.catalog.index[pid] for pid, *_ in ordered]
    eligible = [c for c, pos in sorted(model.consumer_index.items())
                if len(model.references_of(pos)) >= 2]
    n_products = len(model.catalog)
    id_rank = model.catalog.id_rank()

    def score_fn(consumer):
        return model.score_candidates(model.consumer_index[consumer],
                                      np.arange(n_products))

    report = correlation_eval(score_fn, rankings, eligible, id_rank,
                              workers=workers)
    report["n_flagged"] = len(model.consumer_index) - len(eligible)
    return report


def _treatment_report(args, config, model, catalog):
    sens_path = getattr(args, "sensitivity_file", None)
    if sens_path:
        sensitivities = _load_sensitivities(sens_path)
    else:
        sensitivities = model.sensitivity_proxy()
    cfg = treatment_config_from(config)
    eligible = [c for c, pos in sorted(model.consumer_index.items())
                if len(model.references_of(pos)) >= 2]
    low, high = sensitivity_pools(sensitivities, eligible, cfg.pool_quantile)

    def score_fn(consumer, pool):
        return model.score_candidates(model.consumer_index[consumer], pool,
                                      want_price_slope=True)

    rng = np.random.default_rng(config["seed"])
    return treatment_experiment(score_fn, model.catalog.prices,
                                model.catalog.id_rank(), low, high, cfg, rng)


def _load_sensitivities(path) -> dict[str, float]:
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "consumer_id" \
                or "price_sensitivity" not in header:
            raise DataError(
                f"{path}: expected header consumer_id,...,price_sensitivity,...")
        col = header.index("price_sensitivity")
        for row in reader:
            out[row[0]] = float(row[col])
    return out


def _write_treatment_rows(rows, f):
    w = csv.writer(f)
    w.writerow(["repetition", "treatment", "group", "ate"])
    for r in rows:
        w.writerow([r["repetition"], r["treatment"], r["group"], repr(r["ate"])])


def cmd_recommend(args, config) -> int:
    payload, model, splits, log, catalog, digests = _load_model(args, config)
    pos = model.consumer_index.get(args.consumer)
    if pos is None:
        raise DataError(f"unknown consumer '{args.consumer}' "
                        "(not present in the training split)")
    if len(model.references_of(pos)) == 0:
        raise DataError(f"consumer '{args.consumer}' has no reference set")
    if args.k < 1:
        raise ConfigError("K must be >= 1")
    trained = splits.train_items.get(args.consumer, set())
    candidates = np.array([i for i, pid in enumerate(model.catalog.product_ids)
                           if pid not in trained], dtype=np.int64)
    scores = model.score_candidates(pos, candidates)
    order = rank_descending(scores, model.catalog.id_rank()[candidates])
    lines = ["rank,product_id,utility"]
    for r, o in enumerate(order[:args.k], start=1):
        lines.append(f"{r},{model.catalog.product_ids[candidates[o]]},"
                     f"{float(scores[o])!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        write_text_atomic(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_awtp(args, config) -> int:
    payload, model, splits, log, catalog, digests = _load_model(args, config)
    out = args.out or os.path.join(config["paths"]["output_dir"], "awtp.csv")
    _, _, awtp = model.eval_cache()

    def write(f):
        w = csv.writer(f)
        w.writerow(["consumer_id"] + model.catalog.attribute_names)
        for pos, cid in enumerate(model.consumer_ids):
            w.writerow([cid] + [repr(float(x)) for x in awtp[pos]])

    _atomic_csv(write, out)
    _meta_sidecar(out + ".meta.json", config, digests, {"awtp": sha256_file(out)})
    print(f"wrote {out}")
    return 0


def cmd_graphs(args, config) -> int:
    log, catalog, digests, *_ = _load_inputs(config, args)
    window = None
    if config["train"]["window_start"] is not None \
            or config["train"]["window_end"] is not None:
        window = (config["train"]["window_start"], config["train"]["window_end"])
    graphs = build_graphs(log, catalog, window=window,
                          weighted=config["train"]["weighted_edges"])
    out_dir = args.out or config["paths"]["output_dir"]
    os.makedirs(out_dir, exist_ok=True)

    def dump(adj, f):
        w = csv.writer(f)
        w.writerow(["i", "j", "weight"])
        for i, j, weight in adj.edge_list():
            w.writerow([catalog.product_ids[i], catalog.product_ids[j],
                        repr(weight)])

    outputs = {}
    path = os.path.join(out_dir, "refnet.csv")
    _atomic_csv(lambda f: dump(graphs.raw, f), path)
    outputs["refnet"] = sha256_file(path)
    for k, name in enumerate(catalog.attribute_names):
        path = os.path.join(out_dir, f"arn_{name}.csv")
        _atomic_csv(lambda f, k=k: dump(graphs.layers[k], f), path)
        outputs[f"arn_{name}"] = sha256_file(path)
    _meta_sidecar(os.path.join(out_dir, "graphs.meta.json"),
                  config, digests, outputs)
    print(f"wrote {len(outputs)} edge lists to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arcrec",
        description="Reference-dependent choice modeling for recommendation")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master RNG seed")
    parser.add_argument("--workers", type=int, help="evaluation parallelism")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic market")
    p.add_argument("--out", help="output directory")
    p.add_argument("--consumers", type=int)
    p.add_argument("--products", type=int)
    p.add_argument("--paper-scale", action="store_true", dest="paper_scale")
    p.add_argument("--consumers-out", dest="consumers_out",
                   help="also export ground-truth price sensitivities")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the model")
    p.add_argument("--transactions")
    p.add_argument("--catalog")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log-out", dest="log_out", help="training curve JSONL")
    p.add_argument("--embeddings-out", dest="embeddings_out",
                   help="propagated-embedding snapshot CSV")
    p.add_argument("--dim", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--split-mode", dest="split_mode", choices=["lloo", "valonly"])
    p.add_argument("--cold-holdout-fraction", dest="cold_holdout_fraction",
                   type=float)
    p.add_argument("--no-awtp", dest="no_awtp", action="store_true")
    p.add_argument("--no-propagation", dest="no_propagation", action="store_true")
    p.add_argument("--no-decompose", dest="no_decompose", action="store_true")
    p.add_argument("--raw-prices", dest="raw_prices", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--transactions")
    p.add_argument("--catalog")
    p.add_argument("--mode", required=True,
                   choices=["standard", "coldstart", "correlation", "treatment"])
    p.add_argument("--truth", help="simulation truth.csv (correlation mode)")
    p.add_argument("--sensitivity-file", dest="sensitivity_file",
                   help="consumer_id,price_sensitivity CSV (treatment mode)")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--rows-out", dest="rows_out",
                   help="treatment per-repetition CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-K products for one consumer")
    p.add_argument("--checkpoint")
    p.add_argument("--transactions")
    p.add_argument("--catalog")
    p.add_argument("--consumer", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--out")
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("awtp", help="export willingness-to-pay weights")
    p.add_argument("--checkpoint")
    p.add_argument("--transactions")
    p.add_argument("--catalog")
    p.add_argument("--out")
    p.set_defaults(func=cmd_awtp)

    p = sub.add_parser("graphs", help="dump the co-purchase networks")
    p.add_argument("--transactions")
    p.add_argument("--catalog")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_graphs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config["seed"] = args.seed
        if args.workers is not None:
            config["workers"] = args.workers
        return args.func(args, config)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
