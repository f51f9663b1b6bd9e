"""Synthetic cities with visitation drawn from a gravity law.

The generating rate for cluster ``i``, neighborhood ``j`` on day ``t`` is::

    rate = k * population_j**alpha * business_count_i**beta / cost_ji**gamma
           * exp(env_t . env_effects + z_i . cluster_effects + interaction_ij)

where ``cost`` mixes the drive and walk+transit matrices by ``mode_mix``,
``env_t`` holds raw environment values (flags are 0/1) and ``z_i`` the
standardized cluster features.  Counts are Poisson draws from numpy's PCG64
generator.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import (
    CLUSTER_LONG_TAIL,
    ENV_COLUMNS,
    ENV_LONG_TAIL,
    LAND_USES,
    MORPHOLOGIES,
    NEIGHBORHOOD_COLUMNS,
    NEIGHBORHOOD_LONG_TAIL,
    CityGraph,
    FlowTable,
    assemble_city_graph,
    cluster_feature_names,
    standardize_features,
)
from .transport import Edge, RoadNetwork, build_cost_matrices


@dataclass
class ScenarioSpec:
    seed: int = 7
    n_clusters: int = 10
    n_neighborhoods: int = 15
    days: int = 60
    start_date: str = "2019-01-01"
    k: float = 2e-5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    # log-rate change per unit of the raw environment value; the weather
    # terms make every day differ, not only the flagged ones
    env_effects: dict = field(
        default_factory=lambda: {
            "hazard_storm": -1.0,
            "hazard_coastal_flood": -0.5,
            "stay_at_home": -0.8,
            "holiday": 0.3,
            "precip_intensity": -0.5,
            "avg_wind": -0.05,
            "avg_temp": 0.1,
        }
    )
    # (first day offset, last day offset inclusive, env column)
    hazard_calendar: list = field(
        default_factory=lambda: [[18, 20, "hazard_storm"], [33, 33, "hazard_coastal_flood"], [44, 52, "stay_at_home"]]
    )
    holidays: list = field(default_factory=lambda: [0, 20, 48])
    mode_mix: float = 0.7  # weight of the drive matrix in the generating cost
    cluster_effects: dict = field(default_factory=dict)
    # {"feature", "attribute", "threshold", "coef"}: coef * z_feature(i) where
    # the raw neighborhood attribute is below threshold
    interaction: dict | None = None
    area_m: float = 6000.0
    grid_spacing_m: float = 400.0
    pca_components: int = 3
    lstm_window: int = 7

    def __post_init__(self):
        problems = []
        if not self.k > 0 or not all(np.isfinite([self.k, self.alpha, self.beta, self.gamma])):
            problems.append("gravity parameters invalid")
        if self.n_clusters < 1 or self.n_neighborhoods < 1:
            problems.append("need at least one cluster and one neighborhood")
        if self.days < self.lstm_window + 2:
            problems.append(f"days must be >= T + 2 = {self.lstm_window + 2}")
        if not 0.0 <= self.mode_mix <= 1.0:
            problems.append("mode_mix must lie in [0, 1]")
        for name in self.env_effects:
            if name not in ENV_COLUMNS or name == "total_visits_prev":
                problems.append(f"unknown environment effect {name!r}")
        for first, last, name in self.hazard_calendar:
            if name not in ENV_COLUMNS[5:11] or not 0 <= first <= last:
                problems.append(f"bad calendar entry {[first, last, name]}")
        if problems:
            raise ValueError("; ".join(problems))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ScenarioSpec":
        return cls(**obj)


def desk_scenario(seed: int = 7) -> ScenarioSpec:
    """4 clusters, 6 neighborhoods, 14 days."""
    return ScenarioSpec(
        seed=seed,
        n_clusters=4,
        n_neighborhoods=6,
        days=14,
        hazard_calendar=[[5, 6, "hazard_storm"], [11, 12, "stay_at_home"]],
        holidays=[0],
        area_m=3000.0,
    )


@dataclass
class Synthetic:
    city: CityGraph
    flows: FlowTable
    rates: np.ndarray  # (days, n, m)
    counts: np.ndarray  # (days, m, n)
    truth: dict
    raw: dict  # unstandardized tables, keyed clusters / neighborhoods / env / attributes
    network: RoadNetwork
    cluster_xy: np.ndarray
    neighborhood_xy: np.ndarray


def road_grid(rng, area_m: float, spacing_m: float) -> RoadNetwork:
    """Jittered square grid; every 4th row/column carries a bus line."""
    g = int(area_m // spacing_m) + 1
    nodes = {}
    for r in range(g):
        for c in range(g):
            jx, jy = rng.uniform(-0.1, 0.1, 2) * spacing_m
            nodes[r * g + c] = (c * spacing_m + jx, r * spacing_m + jy)
    speeds = (30.0, 40.0, 50.0, None)
    edges = []
    for r in range(g):
        for c in range(g):
            a = r * g + c
            links = []
            if c + 1 < g:
                links.append((a + 1, r % 4 == 0))
            if r + 1 < g:
                links.append((a + g, c % 4 == 0))
            for b, bus in links:
                length = float(np.hypot(*np.subtract(nodes[a], nodes[b]))) * rng.uniform(1.0, 1.2)
                speed = speeds[rng.integers(len(speeds))]
                modes = {"walk", "drive"}
                if bus:
                    modes.add("transit")
                    speed = 25.0 if speed is None else min(speed, 25.0)
                edges.append(Edge(a, b, length, speed, frozenset(modes)))
    return RoadNetwork(nodes, edges)


def _dirichlet(rng, size, n):
    return rng.dirichlet(np.ones(size), n)


def _cluster_table(rng, n, pcs):
    morph = np.zeros((n, len(MORPHOLOGIES)))
    morph[np.arange(n), rng.choice(len(MORPHOLOGIES), n, p=[0.35, 0.35, 0.1, 0.2])] = 1.0
    cols = [
        morph,
        rng.normal(0.0, 1.0, (n, pcs)) * np.linspace(3.0, 1.0, pcs),
        rng.uniform(0.5, 3.0, (n, 1)),
        rng.beta(2.0, 5.0, (n, 1)),
        _dirichlet(rng, len(LAND_USES), n),
        rng.poisson(4.0, (n, 1)).astype(float),
        _dirichlet(rng, 3, n),
        np.maximum(5, np.round(rng.lognormal(np.log(40.0), 0.6, (n, 1)))),
        rng.lognormal(np.log(5e4), 0.5, (n, 1)),
    ]
    return np.hstack(cols)


def _neighborhood_table(rng, m):
    census = np.column_stack(
        [
            rng.normal(40.0, 5.0, m),
            rng.uniform(0.55, 0.98, m),
            rng.beta(2.0, 8.0, m),
            rng.uniform(0.2, 0.6, m),
            rng.uniform(0.5, 0.7, m),
            np.round(rng.lognormal(np.log(4000.0), 0.3, m)),
            rng.uniform(0.1, 0.9, m),
        ]
    )
    access = np.column_stack(
        [rng.lognormal(np.log(60.0), 0.4, m), rng.lognormal(np.log(15.0), 0.3, m), rng.uniform(1.0, 20.0, m)]
    )
    return np.hstack([census, _dirichlet(rng, len(LAND_USES), m), access, _dirichlet(rng, 3, m)])


def per_capita_income(v_raw) -> np.ndarray:
    """Income implied by education and employment, discounted by poverty.

    Not a model input; it is emitted beside the features so neighborhoods can
    be ranked by income without drawing from the random stream.
    """
    col = {name: v_raw[:, NEIGHBORHOOD_COLUMNS.index(name)] for name in ("education", "below_poverty_ratio", "employment")}
    return np.round(12000.0 + 90000.0 * col["education"] * (1.0 - col["below_poverty_ratio"]) * col["employment"] / 0.6)


def _env_table(rng, spec: ScenarioSpec) -> np.ndarray:
    D = spec.days
    t = np.arange(D)
    env = np.zeros((D, len(ENV_COLUMNS)))
    env[:, 0] = 24.0 + 3.0 * np.sin(2 * np.pi * t / 365.0) + rng.normal(0, 1.5, D)
    env[:, 1] = rng.gamma(4.0, 2.0, D)
    env[:, 2] = env[:, 1] * rng.uniform(1.5, 2.5, D)
    env[:, 3] = rng.poisson(0.8, D)
    env[:, 4] = rng.exponential(0.2, D) * (rng.uniform(size=D) < 0.4)
    for first, last, name in spec.hazard_calendar:
        col = ENV_COLUMNS.index(name)
        env[first : min(last, D - 1) + 1, col] = 1.0
        if name == "hazard_storm":
            env[first : min(last, D - 1) + 1, 1:3] *= 3.0
            env[first : min(last, D - 1) + 1, 4] += 2.0
    hol = ENV_COLUMNS.index("holiday")
    for d in spec.holidays:
        if 0 <= d < D:
            env[d, hol] = 1.0
    return env


def gravity_rates(spec: ScenarioSpec, population, business_count, cost_mn) -> np.ndarray:
    """Static (n, m) gravity rates; ``cost_mn`` is (m, n)."""
    return spec.k * population[None, :] ** spec.alpha * business_count[:, None] ** spec.beta / cost_mn.T**spec.gamma


def generate(spec: ScenarioSpec) -> Synthetic:
    rng = np.random.default_rng(spec.seed)
    n, m, D = spec.n_clusters, spec.n_neighborhoods, spec.days
    net = road_grid(rng, spec.area_m, spec.grid_spacing_m)
    margin = 0.1 * spec.area_m
    cluster_xy = rng.uniform(margin, spec.area_m - margin, (n, 2))
    neigh_xy = rng.uniform(margin, spec.area_m - margin, (m, 2))
    costs = build_cost_matrices(net, neigh_xy, cluster_xy)

    c_names = cluster_feature_names(spec.pca_components)
    c_raw = _cluster_table(rng, n, spec.pca_components)
    v_raw = _neighborhood_table(rng, m)
    env_raw = _env_table(rng, spec)

    U, c_stats = standardize_features(c_raw, CLUSTER_LONG_TAIL, c_names)
    V, v_stats = standardize_features(v_raw, NEIGHBORHOOD_LONG_TAIL, NEIGHBORHOOD_COLUMNS)

    population = v_raw[:, NEIGHBORHOOD_COLUMNS.index("population")]
    business = c_raw[:, c_names.index("business_count")]
    eff_cost = spec.mode_mix * costs.drive + (1.0 - spec.mode_mix) * costs.walk_transit
    base = gravity_rates(spec, population, business, eff_cost)

    log_env = np.zeros(D)
    for name, coef in spec.env_effects.items():
        log_env += coef * env_raw[:, ENV_COLUMNS.index(name)]
    log_cluster = np.zeros(n)
    for name, coef in spec.cluster_effects.items():
        log_cluster += coef * U[:, c_names.index(name)]
    log_pair = np.zeros((n, m))
    if spec.interaction:
        it = spec.interaction
        attr = v_raw[:, NEIGHBORHOOD_COLUMNS.index(it["attribute"])]
        log_pair = it["coef"] * np.outer(U[:, c_names.index(it["feature"])], attr < it["threshold"])
    rates = base[None] * np.exp(log_env[:, None, None] + log_cluster[None, :, None] + log_pair[None])
    sampled = rng.poisson(rates)  # (D, n, m)
    counts = np.transpose(sampled, (0, 2, 1))

    totals = counts.reshape(D, -1).sum(axis=1).astype(float)
    env_raw[:, ENV_COLUMNS.index("total_visits_prev")] = np.concatenate([[totals[0]], totals[:-1]])
    W, w_stats = standardize_features(env_raw, ENV_LONG_TAIL, ENV_COLUMNS)

    start = dt.date.fromisoformat(spec.start_date)
    dates = [start + dt.timedelta(days=d) for d in range(D)]
    city = assemble_city_graph(
        U,
        V,
        [costs.drive, costs.walk_transit],
        W,
        {"clusters": c_stats, "neighborhoods": v_stats, "env": w_stats},
        cluster_ids=[f"c{i}" for i in range(n)],
        neighborhood_ids=[f"t{j}" for j in range(m)],
        cluster_feature_names=c_names,
        neighborhood_feature_names=NEIGHBORHOOD_COLUMNS,
        env_feature_names=ENV_COLUMNS,
        dates=dates,
        modes=["drive", "walk_transit"],
    )
    city.cluster_xy = cluster_xy
    city.neighborhood_xy = neigh_xy
    truth = {
        "spec": spec.to_json(),
        "effective_cost": eff_cost,
        "population": population,
        "business_count": business,
        "log_env_modifier": log_env,
        "log_cluster_modifier": log_cluster,
    }
    return Synthetic(
        city=city,
        flows=FlowTable.from_dense(dates, counts),
        rates=rates,
        counts=counts,
        truth=truth,
        raw={"clusters": c_raw, "neighborhoods": v_raw, "env": env_raw,
             "attributes": {"per_capita_income": per_capita_income(v_raw)}},
        network=net,
        cluster_xy=cluster_xy,
        neighborhood_xy=neigh_xy,
    )
