# scratch: heterogeneity vs training length
import sys
import time

import numpy as np

from arcrec.evaluate import sensitivity_pools, treatment_experiment, TreatmentConfig
from arcrec.simulate import SimConfig, generate_market, simulate_periods
from arcrec.training import TrainConfig, train_arcrec

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
dim = int(sys.argv[2]) if len(sys.argv) > 2 else 32

market = generate_market(SimConfig(n_consumers=300, n_products=300, seed=seed))
log, truth = simulate_periods(market, seed=seed + 1)
catalog = market.to_catalog()
sens = {market.consumer_ids[u]: float(market.betas[u]) for u in range(300)}

for epochs in [10, 25, 50, 90]:
    cfg = TrainConfig(dim=dim, depth=2, batch_size=500, lr=0.003, l2=0.0001,
                      max_epochs=epochs, patience=epochs, seed=seed,
                      standardize_prices=False, val_consumers=120,
                      val_candidates=100)
    t0 = time.perf_counter()
    res = train_arcrec(log, catalog, cfg)
    model = res.model
    rng = np.random.default_rng(0)
    cands = np.sort(rng.choice(300, 30, replace=False))
    rows = []
    for cid, pos in sorted(model.consumer_index.items()):
        u = market.consumer_ids.index(cid)
        _, slopes = model.score_candidates(pos, cands, want_price_slope=True)
        rows.append((abs(float(market.betas[u])), float(np.mean(np.abs(slopes)))))
    rows = np.array(rows)
    corr = np.corrcoef(rows[:, 0], rows[:, 1])[0, 1]
    order = np.argsort(rows[:, 0])
    lo, hi = rows[order[:150], 1].mean(), rows[order[150:], 1].mean()
    elig = [c for c, p in sorted(model.consumer_index.items())
            if len(model.references_of(p)) >= 1]
    lp, hp = sensitivity_pools(sens, elig)
    rep = treatment_experiment(
        lambda c, pool: model.score_candidates(model.consumer_index[c], pool,
                                               want_price_slope=True),
        catalog.prices, catalog.id_rank(), lp, hp,
        TreatmentConfig(group_size=50, n_candidates=30, repetitions=10),
        np.random.default_rng(seed + 2))
    m = rep["ate"]
    print(f"ep{epochs:3d} ({time.perf_counter()-t0:4.0f}s) "
          f"val_hr {res.history[-1]['val_hr10']:.3f} loss {res.history[-1]['loss']:.3f} "
          f"corr {corr:+.3f} |slope| lo/hi {lo:.3f}/{hi:.3f} "
          f"ATE -10%: {m['-10%']['low']['mean']:+.2f}/{m['-10%']['high']['mean']:+.2f} "
          f"+10%: {m['+10%']['low']['mean']:+.2f}/{m['+10%']['high']['mean']:+.2f}",
          flush=True)
