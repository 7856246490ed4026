# scratch: criterion 5/6 pass-rate check across the 5 acceptance seeds
import sys
import time

import numpy as np

from arcrec.baseline import train_bprmf
from arcrec.evaluate import correlation_eval, sensitivity_pools, \
    treatment_experiment, TreatmentConfig
from arcrec.simulate import SimConfig, generate_market, simulate_periods
from arcrec.training import TrainConfig, train_arcrec

dim = int(sys.argv[1]) if len(sys.argv) > 1 else 32
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 60
patience = int(sys.argv[3]) if len(sys.argv) > 3 else 10

for seed in (1, 2, 3, 4, 5):
    t0 = time.perf_counter()
    market = generate_market(SimConfig(n_consumers=300, n_products=300, seed=seed))
    log, truth = simulate_periods(market, seed=seed + 1)
    catalog = market.to_catalog()
    cfg = TrainConfig(dim=dim, depth=2, batch_size=500, lr=0.003, l2=0.0001,
                      max_epochs=epochs, patience=patience, seed=seed,
                      standardize_prices=False, val_consumers=120,
                      val_candidates=100)
    res = train_arcrec(log, catalog, cfg)
    model = res.model
    base = train_bprmf(log, catalog, cfg)

    truth_rankings = {market.consumer_ids[u]: list(truth.rankings[u])
                      for u in range(300)}
    id_rank = catalog.id_rank()
    elig2 = [c for c, p in sorted(model.consumer_index.items())
             if len(model.references_of(p)) >= 2]
    arc = correlation_eval(
        lambda c: model.score_candidates(model.consumer_index[c], np.arange(300)),
        truth_rankings, elig2, id_rank)
    mf = correlation_eval(
        lambda c: base.model.score_candidates(base.model.consumer_index[c],
                                              np.arange(300)),
        truth_rankings, [c for c in elig2 if c in base.model.consumer_index],
        id_rank)
    c5 = (arc["kendall_tau"] > 0.05 and arc["spearman_rho"] > 0.05
          and arc["kendall_tau"] > mf["kendall_tau"]
          and arc["spearman_rho"] > mf["spearman_rho"])

    sens = {market.consumer_ids[u]: float(market.betas[u]) for u in range(300)}
    elig1 = [c for c, p in sorted(model.consumer_index.items())
             if len(model.references_of(p)) >= 1]
    lp, hp = sensitivity_pools(sens, elig1)
    rep = treatment_experiment(
        lambda c, pool: model.score_candidates(model.consumer_index[c], pool,
                                               want_price_slope=True),
        catalog.prices, id_rank, lp, hp,
        TreatmentConfig(group_size=50, n_candidates=30, repetitions=30),
        np.random.default_rng(seed + 2))
    m = rep["ate"]
    dn_l, dn_h = m["-10%"]["low"]["mean"], m["-10%"]["high"]["mean"]
    up_l, up_h = m["+10%"]["low"]["mean"], m["+10%"]["high"]["mean"]
    c6 = (dn_l < 0 and dn_h < 0 and up_l > 0 and up_h > 0
          and abs(dn_h) > abs(dn_l) and abs(up_h) > abs(up_l))
    print(f"seed {seed} ({time.perf_counter()-t0:4.0f}s, best {res.best_epoch}"
          f"/{len(res.history)}): tau {arc['kendall_tau']:.3f} vs mf "
          f"{mf['kendall_tau']:.3f} rho {arc['spearman_rho']:.3f} vs "
          f"{mf['spearman_rho']:.3f} C5={'PASS' if c5 else 'fail'} | "
          f"-10% {dn_l:+.3f}/{dn_h:+.3f} +10% {up_l:+.3f}/{up_h:+.3f} "
          f"C6={'PASS' if c6 else 'fail'}", flush=True)
