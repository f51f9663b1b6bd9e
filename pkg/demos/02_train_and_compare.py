"""Train SIM-GAT on the default scenario and compare it with the baselines.

Shows the validation Poisson loss of SIM-GAT, the constant-rate intercept,
GCN and GraphSAGE, then reads one cluster's trade area off the attention
weights on a normal day and on a storm day.

    python3 demos/02_train_and_compare.py
"""

import numpy as np

from simgat.baselines import train_baselines
from simgat.model import SimGatConfig
from simgat.synthcity import ScenarioSpec, generate
from simgat.training import fit_simgat, intercept_baseline, split_days

syn = generate(ScenarioSpec(seed=7))
city = syn.city
cfg = SimGatConfig(epochs=100, seed=7)
model, report, data = fit_simgat(city, syn.flows, cfg)

tr, va = split_days(data.target_days, cfg.val_fraction, cfg.seed)
print("validation Poisson loss (lower is better)")
print(f"  SIM-GAT    {report.best_val_loss:9.4f}  (best epoch {report.best_epoch})")
print(f"  intercept  {intercept_baseline(data, tr, va)['val_loss']:9.4f}")
for kind, (_, rep) in train_baselines(city, data, cfg).items():
    print(f"  {kind:<10} {rep.best_val_loss:9.4f}")

# trade area: where a cluster's attention mass comes from
i = 0
for label, t in (("normal day", 14), ("storm day", 19)):
    fwd = model.forward(data.U, data.V, data.costs, data.windows([t]))
    alpha = fwd.alpha.data[0, i]
    rate = fwd.rate.data[0, i]
    top = np.argsort(rate)[::-1][:3]
    print(f"\n{label} {city.dates[t]}: cluster {city.cluster_ids[i]}, expected visits {rate.sum():.1f}")
    for j in top:
        print(f"  neighborhood {city.neighborhood_ids[j]}  rate {rate[j]:6.2f}  attention {alpha[j]:.3f}")
