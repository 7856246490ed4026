# scratch calibration harness (not part of the package)
import sys
import time

import numpy as np

from arcrec.baseline import train_bprmf
from arcrec.evaluate import correlation_eval, sensitivity_pools, standard_eval, \
    treatment_experiment, TreatmentConfig
from arcrec.simulate import SimConfig, generate_market, simulate_periods
from arcrec.training import TrainConfig, train_arcrec

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
dim = int(sys.argv[2]) if len(sys.argv) > 2 else 32
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 30

t0 = time.perf_counter()
market = generate_market(SimConfig(n_consumers=300, n_products=300, seed=seed))
log, truth = simulate_periods(market, seed=seed + 1)
catalog = market.to_catalog()
print(f"market {market.n_consumers}x{market.n_products}, {len(log)} purchases "
      f"({time.perf_counter()-t0:.1f}s)")

cfg = TrainConfig(dim=dim, depth=2, batch_size=500, lr=0.003, l2=0.0001,
                  max_epochs=epochs, patience=10, seed=seed,
                  standardize_prices=False, val_consumers=120, val_candidates=100)

t0 = time.perf_counter()
res = train_arcrec(log, catalog, cfg, progress=lambda r: print(
    f"  ep {r['epoch']}: loss {r['loss']:.4f} hr10 {r['val_hr10']:.3f}", flush=True))
t_train = time.perf_counter() - t0
print(f"arcrec trained in {t_train:.1f}s, best epoch {res.best_epoch}")

t0 = time.perf_counter()
base = train_bprmf(log, catalog, cfg)
print(f"bprmf trained in {time.perf_counter()-t0:.1f}s, best {base.best_epoch}")

# correlation against truth
truth_rankings = {market.consumer_ids[u]: list(truth.rankings[u])
                  for u in range(market.n_consumers)}
id_rank = catalog.id_rank()
eligible = [c for c, pos in sorted(res.model.consumer_index.items())
            if len(res.model.references_of(pos)) >= 2]
t0 = time.perf_counter()
corr_arc = correlation_eval(
    lambda c: res.model.score_candidates(res.model.consumer_index[c], np.arange(300)),
    truth_rankings, eligible, id_rank)
print(f"arcrec corr in {time.perf_counter()-t0:.1f}s: tau={corr_arc['kendall_tau']:.4f} "
      f"rho={corr_arc['spearman_rho']:.4f} n={corr_arc['n_consumers']}")
corr_mf = correlation_eval(
    lambda c: base.model.score_candidates(base.model.consumer_index[c], np.arange(300)),
    truth_rankings, [c for c in eligible if c in base.model.consumer_index], id_rank)
print(f"bprmf corr: tau={corr_mf['kendall_tau']:.4f} rho={corr_mf['spearman_rho']:.4f}")

# treatment with true betas
sens = {market.consumer_ids[u]: float(market.betas[u])
        for u in range(market.n_consumers)}
elig_t = [c for c, pos in sorted(res.model.consumer_index.items())
          if len(res.model.references_of(pos)) >= 1]
low, high = sensitivity_pools(sens, elig_t)
t0 = time.perf_counter()
rep = treatment_experiment(
    lambda c, pool: res.model.score_candidates(res.model.consumer_index[c], pool,
                                               want_price_slope=True),
    catalog.prices, id_rank, low, high,
    TreatmentConfig(group_size=50, n_candidates=30, repetitions=30),
    np.random.default_rng(seed + 2))
print(f"treatment in {time.perf_counter()-t0:.1f}s:")
for label in ("-10%", "+10%"):
    lo, hi = rep["ate"][label]["low"], rep["ate"][label]["high"]
    print(f"  {label}: low {lo['mean']:+.2f}±{lo['std']:.2f}  "
          f"high {hi['mean']:+.2f}±{hi['std']:.2f}")

# HR@10 standard eval
t0 = time.perf_counter()
std = standard_eval(res.model, res.splits, ks=(5, 10, 15))
print(f"standard eval in {time.perf_counter()-t0:.1f}s: "
      f"hr10={std['hr']['10']:.4f} n={std['n_consumers']} skip={std['n_skipped']}")
std_mf = standard_eval(base.model, base.splits, ks=(10,))
print(f"bprmf hr10={std_mf['hr']['10']:.4f}")
