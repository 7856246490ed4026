# scratch: diagnose price-slope heterogeneity across consumer groups
import sys
import time

import numpy as np

from arcrec.evaluate import sensitivity_pools, treatment_experiment, TreatmentConfig
from arcrec.simulate import SimConfig, generate_market, simulate_periods
from arcrec.training import TrainConfig, train_arcrec

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
dim = int(sys.argv[2]) if len(sys.argv) > 2 else 32
epochs = int(sys.argv[3]) if len(sys.argv) > 3 else 40

market = generate_market(SimConfig(n_consumers=300, n_products=300, seed=seed))
log, truth = simulate_periods(market, seed=seed + 1)
catalog = market.to_catalog()

cfg = TrainConfig(dim=dim, depth=2, batch_size=500, lr=0.003, l2=0.0001,
                  max_epochs=epochs, patience=10, seed=seed,
                  standardize_prices=False, val_consumers=120, val_candidates=100)
t0 = time.perf_counter()
res = train_arcrec(log, catalog, cfg)
print(f"trained {len(res.history)} epochs in {time.perf_counter()-t0:.0f}s "
      f"(best {res.best_epoch}, final loss {res.history[-1]['loss']:.4f})")

model = res.model
rng = np.random.default_rng(0)
cands = np.sort(rng.choice(300, 30, replace=False))

# per-consumer mean |slope| vs true |beta|
joined = []
for cid, pos in sorted(model.consumer_index.items()):
    u = market.consumer_ids.index(cid)
    _, slopes = model.score_candidates(pos, cands, want_price_slope=True)
    joined.append((abs(float(market.betas[u])), float(np.mean(np.abs(slopes))),
                   float(np.mean(slopes))))
joined = np.array(joined)
corr = np.corrcoef(joined[:, 0], joined[:, 1])[0, 1]
print(f"corr(|beta_true|, mean|slope|) = {corr:.3f}")
order = np.argsort(joined[:, 0])
lo_half, hi_half = joined[order[:150]], joined[order[150:]]
print(f"mean|slope| low group {lo_half[:,1].mean():.4f}, high {hi_half[:,1].mean():.4f}")
print(f"mean slope  low group {lo_half[:,2].mean():+.4f}, high {hi_half[:,2].mean():+.4f}")

# candidate utility spread vs price shift magnitude
scores, slopes = model.score_candidates(0, cands, want_price_slope=True)
print(f"score std over candidates: {np.std(scores):.4f}; "
      f"median |slope*0.1*p|: {np.median(np.abs(slopes*0.1*catalog.prices[cands])):.4f}")

sens = {market.consumer_ids[u]: float(market.betas[u]) for u in range(300)}
elig = [c for c, p in sorted(model.consumer_index.items())
        if len(model.references_of(p)) >= 1]
low, high = sensitivity_pools(sens, elig)
rep = treatment_experiment(
    lambda c, pool: model.score_candidates(model.consumer_index[c], pool,
                                           want_price_slope=True),
    catalog.prices, catalog.id_rank(), low, high,
    TreatmentConfig(group_size=50, n_candidates=30, repetitions=30),
    np.random.default_rng(seed + 2))
for label in ("-10%", "+10%"):
    lo, hi = rep["ate"][label]["low"], rep["ate"][label]["high"]
    print(f"{label}: low {lo['mean']:+.3f}±{lo['std']:.2f}  "
          f"high {hi['mean']:+.3f}±{hi['std']:.2f}")
