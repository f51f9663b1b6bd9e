"""Calibrate the classic spatial interaction models on a synthetic city.

The generator draws visits from a gravity law with known exponents, so the
Poisson fit should land near them.  Huff shares are then computed from the
fitted distance decay.

    python3 demos/01_classic_models.py
"""

import numpy as np

from simgat.classic import HuffParams, fit_gravity, fit_huff, huff_probability
from simgat.synthcity import ScenarioSpec, generate

spec = ScenarioSpec(seed=7)
syn = generate(spec)
city = syn.city
counts = syn.flows.to_dense(city.dates, city.m, city.n).sum(axis=0)  # (m, n)

# the masses and the blended drive/transit cost the generator actually used
population = np.asarray(syn.truth["population"])
business = np.asarray(syn.truth["business_count"])
cost = np.asarray(syn.truth["effective_cost"])

res = fit_gravity(counts, population, business, cost, exposure=len(city.dates))
print("gravity fit (Poisson IRLS)")
print(f"  alpha {res.params.alpha:.3f}  beta {res.params.beta:.3f}  gamma {res.params.gamma:.3f}")
print(f"  generating values: alpha {spec.alpha}, beta {spec.beta}, gamma {spec.gamma}")
print(f"  deviance {res.diagnostics.deviance:.1f} on {counts.size} cells")

huff = fit_huff(counts, business, cost)
print("\nHuff fit")
print(f"  attractiveness exponent {huff.params.alpha:.3f}, decay {huff.params.beta:.3f}")

P = huff_probability(HuffParams(huff.params.alpha, huff.params.beta), business, cost)
j = int(np.argmax(population))
top = np.argsort(P[j])[::-1][:3]
print(f"\nlargest neighborhood {city.neighborhood_ids[j]}: top destinations")
for i in top:
    print(f"  cluster {city.cluster_ids[i]}  share {P[j, i]:.3f}  cost {cost[j, i]:.1f} min")
