"""Build a city graph from raw points of interest and a road network.

This is the path real data takes before training.  DBSCAN turns POIs into
business clusters and Dijkstra gives per-mode travel times from every
neighborhood to every cluster; standardizing the feature tables then yields
a ``CityGraph``.  Everything except the POIs comes from the synthetic
generator; the POIs are scattered around a few made-up shopping streets.

    python3 demos/04_city_from_pois.py
"""

import numpy as np

from simgat.clustering import DbscanParams, centroids, dbscan, featurize_clusters
from simgat.domain import (
    CLUSTER_LONG_TAIL,
    ENV_COLUMNS,
    ENV_LONG_TAIL,
    NEIGHBORHOOD_COLUMNS,
    NEIGHBORHOOD_LONG_TAIL,
    Poi,
    assemble_city_graph,
    cluster_feature_names,
    standardize_features,
)
from simgat.synthcity import ScenarioSpec, generate
from simgat.transport import build_cost_matrices

rng = np.random.default_rng(3)
syn = generate(ScenarioSpec(seed=7))

codes = ["445110", "722511", "722513", "448140", "452210", "713940"]
streets = [(1200, 1500), (4300, 1100), (2900, 4200), (4800, 4700), (900, 4400)]
pois = []
for s, (x, y) in enumerate(streets):
    for k in range(rng.integers(15, 40)):
        pois.append(Poi(f"s{s}-{k}", x + rng.normal(0, 70), y + rng.normal(0, 70),
                        str(rng.choice(codes)), bool(rng.random() < 0.3)))
for k in range(30):  # scattered shops that should end up as noise
    pois.append(Poi(f"lone-{k}", *rng.uniform(0, 6000, 2), str(rng.choice(codes))))

assignment = dbscan(pois, DbscanParams(eps=200.0, min_pts=5))
print(f"{len(pois)} POIs -> {assignment.n_clusters} clusters, {len(assignment.noise)} noise points")

feats, basis, _ = featurize_clusters(pois, assignment)
names = cluster_feature_names(len(feats[0].poi_counts_reduced))
c_raw = np.array([f.vector() for f in feats])
cxy = np.array(list(centroids(pois, assignment).values()))

costs = build_cost_matrices(syn.network, syn.neighborhood_xy, cxy)
print(f"drive times (min): {costs.drive.min():.1f} .. {costs.drive.max():.1f}; "
      f"walk+transit: {costs.walk_transit.min():.1f} .. {costs.walk_transit.max():.1f}")

U, u_stats = standardize_features(c_raw, [c for c in CLUSTER_LONG_TAIL if c in names], names)
V, v_stats = standardize_features(syn.raw["neighborhoods"], NEIGHBORHOOD_LONG_TAIL, NEIGHBORHOOD_COLUMNS)
W, w_stats = standardize_features(syn.raw["env"], ENV_LONG_TAIL, ENV_COLUMNS)
city = assemble_city_graph(
    U, V, list(costs.matrices.values()), W,
    {"clusters": u_stats, "neighborhoods": v_stats, "env": w_stats},
    cluster_feature_names=names,
    neighborhood_feature_names=NEIGHBORHOOD_COLUMNS,
    env_feature_names=ENV_COLUMNS,
    dates=syn.city.dates,
    modes=costs.modes,
)
print(f"city graph: {city.n} clusters x {city.m} neighborhoods x {len(city.dates)} days, "
      f"{city.clusters.shape[1]} cluster features, modes {city.modes}")
