# scratch: grid over (dim, mlp_init_std, epochs) for treatment heterogeneity
import sys
import time

import numpy as np

from arcrec.evaluate import correlation_eval, sensitivity_pools, \
    treatment_experiment, TreatmentConfig
from arcrec.simulate import SimConfig, generate_market, simulate_periods
from arcrec.training import TrainConfig, train_arcrec

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1

market = generate_market(SimConfig(n_consumers=300, n_products=300, seed=seed))
log, truth = simulate_periods(market, seed=seed + 1)
catalog = market.to_catalog()
sens = {market.consumer_ids[u]: float(market.betas[u]) for u in range(300)}
truth_rankings = {market.consumer_ids[u]: list(truth.rankings[u]) for u in range(300)}
id_rank = catalog.id_rank()

for dim, std, epochs in [(32, 0.6, 40), (64, 0.3, 40), (64, 0.6, 40)]:
    cfg = TrainConfig(dim=dim, depth=2, batch_size=500, lr=0.003, l2=0.0001,
                      max_epochs=epochs, patience=10, seed=seed,
                      standardize_prices=False, val_consumers=120,
                      val_candidates=100, mlp_init_std=std)
    t0 = time.perf_counter()
    res = train_arcrec(log, catalog, cfg)
    model = res.model
    dt = time.perf_counter() - t0

    rng = np.random.default_rng(0)
    cands = np.sort(rng.choice(300, 30, replace=False))
    rows = []
    for cid, pos in sorted(model.consumer_index.items()):
        u = market.consumer_ids.index(cid)
        sc, slopes = model.score_candidates(pos, cands, want_price_slope=True)
        rows.append((abs(float(market.betas[u])), float(np.mean(np.abs(slopes))),
                     float(np.std(sc))))
    rows = np.array(rows)
    corr = np.corrcoef(rows[:, 0], rows[:, 1])[0, 1]
    order = np.argsort(rows[:, 0])
    lo_s, hi_s = rows[order[:150], 1].mean(), rows[order[150:], 1].mean()
    lo_sp, hi_sp = rows[order[:150], 2].mean(), rows[order[150:], 2].mean()

    elig = [c for c, p in sorted(model.consumer_index.items())
            if len(model.references_of(p)) >= 1]
    lp, hp = sensitivity_pools(sens, elig)
    rep = treatment_experiment(
        lambda c, pool: model.score_candidates(model.consumer_index[c], pool,
                                               want_price_slope=True),
        catalog.prices, id_rank, lp, hp,
        TreatmentConfig(group_size=50, n_candidates=30, repetitions=10),
        np.random.default_rng(seed + 2))
    m = rep["ate"]
    elig2 = [c for c, p in sorted(model.consumer_index.items())
             if len(model.references_of(p)) >= 2]
    corr_r = correlation_eval(
        lambda c: model.score_candidates(model.consumer_index[c], np.arange(300)),
        truth_rankings, elig2[:100], id_rank)
    print(f"d{dim} std{std} ({dt:3.0f}s, best {res.best_epoch}/{len(res.history)}) "
          f"tau {corr_r['kendall_tau']:.3f} slope-corr {corr:+.3f} "
          f"|slope| {lo_s:.2f}/{hi_s:.2f} spread {lo_sp:.2f}/{hi_sp:.2f} "
          f"ATE-10 {m['-10%']['low']['mean']:+.2f}/{m['-10%']['high']['mean']:+.2f} "
          f"ATE+10 {m['+10%']['low']['mean']:+.2f}/{m['+10%']['high']['mean']:+.2f}",
          flush=True)
