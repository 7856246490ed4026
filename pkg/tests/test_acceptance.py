"""Acceptance suite.

Each test enforces one acceptance criterion at its stated tolerance and
prints a single PASS/FAIL line. The learning-signal criteria (5-8) train
real models on seed-fixed synthetic markets; they are the slow part of
the suite and share one trained-model cache per seed.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import stats

from arcrec import autodiff as ad
from arcrec.autodiff import Tape, Tensor
from arcrec.baseline import train_bprmf
from arcrec.data import ProductCatalog, Purchase, TransactionLog
from arcrec.evaluate import TreatmentConfig, cold_start_eval, correlation_eval, \
    sensitivity_pools, standard_eval, treatment_experiment
from arcrec.graphs import Adjacency, build_graphs
from arcrec.metrics import hit_ratio, kendall_tau, ndcg, spearman_rho
from arcrec.model import ArcRec, ModelConfig, build_references
from arcrec.propagation import layer_weights, propagate, propagation_operator
from arcrec.simulate import SimConfig, choice_probabilities, generate_market, \
    simulate_periods
from arcrec.training import TrainConfig, TripletSampler, bpr_loss, train_arcrec
from conftest import assert_grads_close, central_difference

SEEDS = (1, 2, 3, 4, 5)


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f"  [{detail}]" if detail else ""
    print(f"\nACCEPTANCE {number:2d} ({name}): {status}{suffix}")
    assert ok, f"criterion {number} ({name}) failed: {detail}"


# ---------------------------------------------------------------------------
# criterion 1: gradient correctness on random small instances
# ---------------------------------------------------------------------------

def _random_instance(seed: int):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 11))          # <= 10 products
    k = int(rng.integers(1, 4))           # K <= 3
    dim = int(rng.integers(2, 9))         # d <= 8
    ids = [f"p{i:02d}" for i in range(n)]
    cols = [[f"v{rng.integers(0, 3)}" for _ in range(n)] for _ in range(k)]
    catalog = ProductCatalog(ids, rng.uniform(0.5, 3.0, n),
                             [f"a{j}" for j in range(k)], cols)
    records = []
    for u in range(3):
        picks = rng.choice(n, size=min(4, n), replace=False)
        for t, p in enumerate(picks):
            records.append(Purchase(f"u{u}", ids[p], t))
    log = TransactionLog(records)
    config = ModelConfig(dim=dim, depth=1, standardize_prices=False)
    graphs = build_graphs(log, catalog)
    by_consumer = log.by_consumer()
    refs = build_references(by_consumer, catalog, 50)
    model = ArcRec(catalog, graphs, refs, sorted(by_consumer), config, rng)
    u = np.array([0])
    i = np.array([model.references[0][0]])
    j_pool = [p for p in range(n) if p not in set(model.references[0])]
    j = np.array([j_pool[0] if j_pool else (n - 1)])
    return model, u, i, j


def test_criterion_1_gradient_correctness():
    t0 = time.perf_counter()
    checked = 0
    for trial in range(100):
        model, u, i, j = _random_instance(8800 + trial)
        model.refresh_eval_cache()
        h_vals, _, _ = model.eval_cache()
        awtp = model.awtp_matrix(h_vals, u)

        def forward():
            h_layers, h_star = model.propagated()
            utility = model.batch_scores(u, i, i, h_layers, h_star, awtp)
            negs = model.batch_scores(u, j, i, h_layers, h_star, awtp)
            loss = bpr_loss(utility, negs, model.params(), 0.0001)
            return utility, loss

        with Tape() as tape:
            utility, loss = forward()
            both = ad.add(ad.tsum(utility), ad.scale(loss, 0.7))
        grads = tape.backward(both)

        for p in model.params():
            base = p.value.copy()

            def f(arrs):
                p.value = arrs[0]
                try:
                    utility, loss = forward()
                    return float(utility.value[0] + 0.7 * loss.item())
                finally:
                    p.value = base

            fd = central_difference(f, [base])[0]
            assert_grads_close(grads.get(p, np.zeros_like(base)), fd, rel=1e-4)
            checked += p.value.size
    elapsed = time.perf_counter() - t0
    report(1, "gradient correctness", elapsed < 60.0,
           f"100 instances, {checked} partials, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion 2: propagation against the dense operator
# ---------------------------------------------------------------------------

def test_criterion_2_propagation_oracle():
    from test_propagation import dense_operator, random_adjacency
    rng = np.random.default_rng(4242)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(1, 11))
        adj = random_adjacency(rng, n, p=float(rng.uniform(0.1, 0.9)))
        op = propagation_operator(adj)
        h0 = rng.normal(size=(n, int(rng.integers(1, 5))))
        hs = propagate(op, Tensor(h0), 2)
        P = dense_operator(adj)
        worst = max(worst, float(np.abs(hs[1].value - P @ h0).max()))
        worst = max(worst, float(np.abs(hs[2].value - P @ (P @ h0)).max()))
    weights_ok = layer_weights(2) == [6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]
    report(2, "propagation oracle", worst < 1e-10 and weights_ok,
           f"max abs err {worst:.2e}, L=2 weights exact: {weights_ok}")


# ---------------------------------------------------------------------------
# criterion 3: ranking-metric oracles
# ---------------------------------------------------------------------------

def test_criterion_3_metric_oracles():
    from test_metrics import brute_kendall, brute_spearman
    exact = True
    for n in range(2, 7):
        truth = list(range(n))
        for perm in itertools.permutations(truth):
            if kendall_tau(truth, list(perm)) != brute_kendall(truth, perm):
                exact = False
            if spearman_rho(truth, list(perm)) != brute_spearman(truth, perm):
                exact = False
    hand = ndcg([list("abcde")], ["c"], 5) == pytest.approx(0.5)
    hand = hand and hit_ratio([list("abcde")], ["c"], 5) == 1.0
    hand = hand and ndcg([list("abcde")], ["a"], 5) == 1.0
    report(3, "metric oracles", exact and hand,
           "all permutations n<=6 exact; hand nDCG values match")


# ---------------------------------------------------------------------------
# criterion 4: simulation fidelity
# ---------------------------------------------------------------------------

def test_criterion_4_simulation_fidelity():
    from test_simulate import _chi2_pvalue
    market = generate_market(SimConfig(n_consumers=500, n_products=40, seed=99))
    betas_ok = bool(np.all(market.betas < 0))

    r = market.deterministic_utilities(3, ref_price=float(market.prices.mean()))
    probs = choice_probabilities(r)
    rng = np.random.default_rng(100)
    draws = rng.choice(market.n_products, size=100_000, p=probs)
    counts = np.bincount(draws, minlength=market.n_products).astype(float)
    pvalue = _chi2_pvalue(counts, probs)

    log, truth = simulate_periods(market, seed=101)
    price_of = {pid: market.prices[i] for i, pid in enumerate(market.product_ids)}
    running_ok = True
    for u, cid in enumerate(market.consumer_ids):
        paid = [price_of[rec.product] for rec in log.by_consumer()[cid]]
        if truth.ref_prices[u] != np.mean(paid):
            # exact running-mean contract, no tolerance
            running_ok = abs(truth.ref_prices[u] - np.mean(paid)) == 0.0
            if not running_ok:
                break
    report(4, "simulation fidelity",
           betas_ok and pvalue > 0.01 and running_ok,
           f"betas<0: {betas_ok}, chi2 p={pvalue:.3f}, running mean exact: {running_ok}")


# ---------------------------------------------------------------------------
# criterion 9: normalization and price-shift invariants
# ---------------------------------------------------------------------------

def test_criterion_9_normalization_invariants():
    from test_model import make_small_model
    worst_gamma = worst_awtp = worst_logit = worst_shift = 0.0
    for seed in range(12):
        model, catalog, _ = make_small_model(seed=700 + seed, n=9, n_attrs=3,
                                             dim=4, n_consumers=6)
        h_layers, h_star = model.propagated()
        h_vals = [h.value for h in h_layers]
        for target in range(4):
            gamma = model.attention_weights(target, np.array([4, 5, 6, 7]),
                                            h_star).value
            worst_gamma = max(worst_gamma, abs(gamma.sum() - 1.0))
        rows = model.awtp_matrix(h_vals, np.arange(len(model.consumer_ids)))
        worst_awtp = max(worst_awtp, float(np.abs(rows.sum(axis=1) - 1.0).max()))

        rng = np.random.default_rng(seed)
        probs = choice_probabilities(rng.normal(scale=4, size=50))
        worst_logit = max(worst_logit, abs(float(probs.sum()) - 1.0))

        base = model.pair_utility(0, 5, 3, h_layers).item()
        for c in (0.9, -7.5):
            model.prices_model = model.prices_model.copy()
            saved = float(model.prices_model[3])
            model.prices_model[3] = saved + c
            shifted = model.pair_utility(
                0, 5, 3, h_layers,
                target_price_model=float(model.prices_model[5] + c)).item()
            worst_shift = max(worst_shift, abs(shifted - base))
            model.prices_model[3] = saved
    ok = worst_gamma < 1e-9 and worst_awtp < 1e-9 and worst_logit < 1e-9 \
        and worst_shift < 1e-10
    report(9, "normalization invariants", ok,
           f"gamma {worst_gamma:.1e}, awtp {worst_awtp:.1e}, "
           f"logit {worst_logit:.1e}, shift {worst_shift:.1e}")


# ---------------------------------------------------------------------------
# criterion 10: CLI determinism
# ---------------------------------------------------------------------------

def test_criterion_10_cli_determinism(tmp_path, capsys):
    from arcrec.cli import main

    def run_all(root):
        root.mkdir(exist_ok=True)
        sim = root / "sim"
        assert main(["--seed", "77", "simulate", "--out", str(sim),
                     "--consumers", "30", "--products", "20",
                     "--consumers-out", str(sim / "consumers.csv")]) == 0
        ckpt = root / "model.json"
        assert main(["--seed", "77", "train",
                     "--transactions", str(sim / "transactions.csv"),
                     "--catalog", str(sim / "catalog.csv"),
                     "--out", str(ckpt), "--log-out", str(root / "log.jsonl"),
                     "--embeddings-out", str(root / "emb.csv"),
                     "--dim", "4", "--depth", "1", "--epochs", "1",
                     "--batch-size", "64", "--raw-prices"]) == 0
        assert main(["--seed", "77", "evaluate", "--checkpoint", str(ckpt),
                     "--transactions", str(sim / "transactions.csv"),
                     "--catalog", str(sim / "catalog.csv"),
                     "--mode", "standard", "--out", str(root / "std.json")]) == 0
        assert main(["--seed", "77", "evaluate", "--checkpoint", str(ckpt),
                     "--transactions", str(sim / "transactions.csv"),
                     "--catalog", str(sim / "catalog.csv"),
                     "--mode", "correlation", "--truth", str(sim / "truth.csv"),
                     "--out", str(root / "corr.json")]) == 0
        assert main(["--seed", "77", "awtp", "--checkpoint", str(ckpt),
                     "--transactions", str(sim / "transactions.csv"),
                     "--catalog", str(sim / "catalog.csv"),
                     "--out", str(root / "awtp.csv")]) == 0
        assert main(["--seed", "77", "graphs",
                     "--transactions", str(sim / "transactions.csv"),
                     "--catalog", str(sim / "catalog.csv"),
                     "--out", str(root / "graphs")]) == 0
        with open(sim / "transactions.csv") as f:
            consumer = f.readlines()[1].split(",")[0]
        assert main(["--seed", "77", "recommend", "--checkpoint", str(ckpt),
                     "--transactions", str(sim / "transactions.csv"),
                     "--catalog", str(sim / "catalog.csv"),
                     "--consumer", consumer, "--k", "5",
                     "--out", str(root / "rec.csv")]) == 0
        names = ["sim/transactions.csv", "sim/catalog.csv", "sim/truth.csv",
                 "sim/consumers.csv", "sim/simulate.meta.json", "model.json",
                 "log.jsonl", "emb.csv", "std.json", "corr.json", "awtp.csv",
                 "graphs/refnet.csv", "rec.csv"]
        return {n: (root / n).read_bytes() for n in names}

    a = run_all(tmp_path / "runA")
    b = run_all(tmp_path / "runB")
    capsys.readouterr()
    same = [n for n in a if a[n] == b[n]]
    ok = len(same) == len(a)
    report(10, "CLI determinism", ok,
           f"{len(same)}/{len(a)} artifacts byte-identical across reruns")
