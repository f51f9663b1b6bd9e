"""Domain records and feature preprocessing, ending in the validated city graph."""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

COST_FLOOR = 1.0  # minutes
MORPHOLOGIES = ("plaza", "street", "downtown", "mall")
LAND_USES = (
    "commercial",
    "mixed",
    "office",
    "parking",
    "recreation",
    "single_family",
    "multi_family",
    "vacant",
)
FLOOD_ZONES = ("x", "a", "v")
CENSUS_FIELDS = (
    "age",
    "auto_ownership",
    "below_poverty_ratio",
    "education",
    "employment",
    "population",
    "race_white_share",
)
ACCESS_FIELDS = ("intersection_density", "roadway_density", "walkability")
WEATHER_FIELDS = (
    "avg_temp",
    "avg_wind",
    "fastest_2min_wind",
    "multiday_precip_days",
    "precip_intensity",
)
HAZARD_FIELDS = ("hazard_coastal_flood", "hazard_flood", "hazard_others", "hazard_storm")

NEIGHBORHOOD_COLUMNS = (
    list(CENSUS_FIELDS)
    + [f"lu_{u}" for u in LAND_USES]
    + list(ACCESS_FIELDS)
    + [f"flood_{z}" for z in FLOOD_ZONES]
)
NEIGHBORHOOD_LONG_TAIL = ("population", "intersection_density", "roadway_density")
ENV_COLUMNS = list(WEATHER_FIELDS) + list(HAZARD_FIELDS) + ["stay_at_home", "holiday", "total_visits_prev"]
ENV_LONG_TAIL = ("precip_intensity", "total_visits_prev")
CLUSTER_LONG_TAIL = ("bus_stop_count", "business_count", "total_area")

_NAICS = re.compile(r"^\d{6}$")


class ValidationError(ValueError):
    """Raised with an itemized list of problems."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Poi:
    id: str
    x: float
    y: float
    naics: str
    is_chain: bool = False

    def __post_init__(self):
        if not _NAICS.match(self.naics):
            raise ValueError(f"POI {self.id}: NAICS code {self.naics!r} is not 6 digits")
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"POI {self.id}: non-finite coordinates")


def check_unique_ids(pois: Sequence[Poi]) -> None:
    seen = set()
    for p in pois:
        if p.id in seen:
            raise ValueError(f"duplicate POI id {p.id!r}")
        seen.add(p.id)


@dataclass
class ClusterFeatures:
    morphology: np.ndarray
    poi_counts_reduced: np.ndarray
    poi_diversity: float
    chain_ratio: float
    land_use: np.ndarray
    bus_stop_count: float
    flood_zone: np.ndarray
    business_count: float
    total_area: float

    def __post_init__(self):
        problems = []
        m = np.asarray(self.morphology, dtype=float)
        if m.shape != (4,) or not np.all(np.isin(m, (0.0, 1.0))) or m.sum() != 1:
            problems.append("morphology must be a 4-way one-hot vector")
        if np.asarray(self.land_use).shape != (8,) or np.any(np.asarray(self.land_use) < 0):
            problems.append("land_use must be 8 nonnegative proportions")
        fz = np.asarray(self.flood_zone)
        if fz.shape != (3,) or np.any((fz < 0) | (fz > 1)):
            problems.append("flood_zone must be 3 proportions in [0, 1]")
        if not 0.0 <= self.chain_ratio <= 1.0:
            problems.append("chain_ratio outside [0, 1]")
        if self.poi_diversity < 0:
            problems.append("poi_diversity negative")
        if self.bus_stop_count < 0 or self.business_count < 0:
            problems.append("counts must be nonnegative")
        if problems:
            raise ValidationError(problems)

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.morphology,
                self.poi_counts_reduced,
                [self.poi_diversity, self.chain_ratio],
                self.land_use,
                [self.bus_stop_count],
                self.flood_zone,
                [self.business_count, self.total_area],
            ]
        ).astype(float)


def cluster_feature_names(n_components: int) -> list[str]:
    return (
        [f"morph_{m}" for m in MORPHOLOGIES]
        + [f"poi_pc{i + 1}" for i in range(n_components)]
        + ["poi_diversity", "chain_ratio"]
        + [f"lu_{u}" for u in LAND_USES]
        + ["bus_stop_count"]
        + [f"flood_{z}" for z in FLOOD_ZONES]
        + ["business_count", "total_area"]
    )


@dataclass
class NeighborhoodFeatures:
    census: np.ndarray
    land_use: np.ndarray
    accessibility: np.ndarray
    flood_zone: np.ndarray

    def __post_init__(self):
        problems = []
        for name, arr, size in (
            ("census", self.census, 7),
            ("land_use", self.land_use, 8),
            ("accessibility", self.accessibility, 3),
            ("flood_zone", self.flood_zone, 3),
        ):
            a = np.asarray(arr, dtype=float)
            if a.shape != (size,) or not np.all(np.isfinite(a)):
                problems.append(f"{name} must be {size} finite values")
        lu, fz = np.asarray(self.land_use), np.asarray(self.flood_zone)
        if np.any((lu < 0) | (lu > 1)) or np.any((fz < 0) | (fz > 1)):
            problems.append("proportions must lie in [0, 1]")
        if np.asarray(self.census)[CENSUS_FIELDS.index("population")] < 0:
            problems.append("population negative")
        if problems:
            raise ValidationError(problems)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.census, self.land_use, self.accessibility, self.flood_zone]).astype(float)


@dataclass
class EnvRecord:
    date: dt.date
    weather: np.ndarray
    hazard: np.ndarray
    stay_at_home: bool = False
    holiday: bool = False
    total_visits_prev: float = 0.0

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                np.asarray(self.weather, dtype=float),
                np.asarray(self.hazard, dtype=float),
                [float(self.stay_at_home), float(self.holiday), float(self.total_visits_prev)],
            ]
        )


def env_matrix(records: Sequence[EnvRecord]) -> tuple[list[dt.date], np.ndarray]:
    """Stack records into a (days, 12) matrix after checking the date range."""
    records = sorted(records, key=lambda r: r.date)
    dates = [r.date for r in records]
    for prev, cur in zip(dates, dates[1:]):
        if (cur - prev).days != 1:
            raise ValidationError([f"env dates not contiguous between {prev} and {cur}"])
    return dates, np.array([r.vector() for r in records]).reshape(len(records), len(ENV_COLUMNS))


# --------------------------------------------------------------------------
# standardization


@dataclass
class ColumnStats:
    names: list[str]
    is_log: np.ndarray
    mean: np.ndarray
    sd: np.ndarray

    def apply(self, matrix) -> np.ndarray:
        x = np.array(matrix, dtype=float)
        if x.ndim != 2 or x.shape[1] != len(self.names):
            raise ValueError(f"expected {len(self.names)} columns, got shape {x.shape}")
        _check_finite(x)
        for j in np.flatnonzero(self.is_log):
            if np.any(x[:, j] < 0):
                raise ValueError(f"column {j} ({self.names[j]}): negative value in log column")
            x[:, j] = np.log1p(x[:, j])
        return (x - self.mean) / self.sd

    def invert(self, z) -> np.ndarray:
        x = np.asarray(z, dtype=float) * self.sd + self.mean
        for j in np.flatnonzero(self.is_log):
            x[:, j] = np.expm1(x[:, j])
        return x

    def to_json(self) -> list[dict]:
        return [
            {"name": n, "is_log": bool(l), "mean": float(m), "sd": float(s)}
            for n, l, m, s in zip(self.names, self.is_log, self.mean, self.sd)
        ]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "ColumnStats":
        return cls(
            names=[r["name"] for r in rows],
            is_log=np.array([bool(r["is_log"]) for r in rows]),
            mean=np.array([float(r["mean"]) for r in rows]),
            sd=np.array([float(r["sd"]) for r in rows]),
        )

    def identity(self) -> "ColumnStats":
        """Stats that leave already-standardized data unchanged."""
        k = len(self.names)
        return ColumnStats(list(self.names), np.zeros(k, bool), np.zeros(k), np.ones(k))


def _check_finite(x: np.ndarray) -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        col = int(np.argwhere(bad)[0][1])
        raise ValueError(f"column {col}: NaN or infinite value")


def standardize_features(matrix, long_tail_columns=(), names: Sequence[str] | None = None):
    """Z-score each column, after ``ln(1 + x)`` on the long-tail ones.

    ``long_tail_columns`` holds column indices or, when ``names`` is given,
    column names.  Constant columns keep sd = 1.  Returns the standardized
    matrix and the :class:`ColumnStats` that reproduce it.
    """
    x = np.array(matrix, dtype=float)
    if x.ndim != 2:
        raise ValueError("standardize_features expects a 2-D matrix")
    names = list(names) if names is not None else [f"c{j}" for j in range(x.shape[1])]
    is_log = np.zeros(x.shape[1], dtype=bool)
    for c in long_tail_columns:
        is_log[names.index(c) if isinstance(c, str) else int(c)] = True
    stats = ColumnStats(names, is_log, np.zeros(x.shape[1]), np.ones(x.shape[1]))
    _check_finite(x)
    logged = stats.apply(x)  # identity scaling, log transform only
    stats.mean = logged.mean(axis=0)
    sd = logged.std(axis=0)
    stats.sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(stats.mean)), sd, 1.0)
    return (logged - stats.mean) / stats.sd, stats


# --------------------------------------------------------------------------
# PCA


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # d x p, orthonormal columns
    eigenvalues: np.ndarray  # all d, descending

    @property
    def explained_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        return self.eigenvalues / total if total > 0 else np.zeros_like(self.eigenvalues)

    def project(self, counts) -> np.ndarray:
        return (np.asarray(counts, dtype=float) - self.mean) @ self.components

    def reconstruct(self, reduced) -> np.ndarray:
        return np.asarray(reduced) @ self.components.T + self.mean

    def to_json(self) -> dict:
        return {
            "eigenvalues": self.eigenvalues.tolist(),
            "components": self.components.tolist(),
            "mean": self.mean.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PcaBasis":
        return cls(np.array(obj["mean"], float), np.array(obj["components"], float), np.array(obj["eigenvalues"], float))


def pca_reduce(counts, target_variance: float = 0.9651):
    """Project onto the fewest leading components reaching ``target_variance``."""
    x = np.asarray(counts, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("pca_reduce expects an n x d matrix with d >= 1")
    if x.shape[0] < 2:
        raise ValueError("pca_reduce needs at least 2 rows")
    if not 0.0 < target_variance <= 1.0:
        raise ValueError("target_variance must lie in (0, 1]")
    mu = x.mean(axis=0)
    cov = np.cov(x - mu, rowvar=False, ddof=1).reshape(x.shape[1], x.shape[1])
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    # deterministic sign: largest-magnitude loading positive
    flip = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(vecs.shape[1])])
    vecs = vecs * np.where(flip == 0, 1.0, flip)
    total = vals.sum()
    if total <= 0:
        p = 1
    else:
        cum = np.cumsum(vals) / total
        p = int(np.searchsorted(cum, target_variance - 1e-12) + 1)
        p = min(p, len(vals))
    basis = PcaBasis(mu, vecs[:, :p], vals)
    return basis.project(x), basis


# --------------------------------------------------------------------------
# city graph


@dataclass
class CityGraph:
    """Everything the model reads about one city, standardized.

    ``costs[k]`` is an (m neighborhoods x n clusters) matrix in minutes.
    """

    clusters: np.ndarray
    neighborhoods: np.ndarray
    costs: list[np.ndarray]
    env: np.ndarray
    cluster_ids: list[str]
    neighborhood_ids: list[str]
    cluster_feature_names: list[str]
    neighborhood_feature_names: list[str]
    env_feature_names: list[str]
    dates: list[dt.date]
    modes: list[str] = field(default_factory=lambda: ["drive"])
    stats: dict[str, ColumnStats] = field(default_factory=dict)
    cluster_xy: np.ndarray | None = None
    neighborhood_xy: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.clusters.shape[0]

    @property
    def m(self) -> int:
        return self.neighborhoods.shape[0]

    def date_index(self, date) -> int:
        if isinstance(date, str):
            date = dt.date.fromisoformat(date)
        try:
            return self.dates.index(date)
        except ValueError:
            raise KeyError(f"no environment record for {date}") from None


def _standardized_problems(name: str, x: np.ndarray) -> list[str]:
    problems = []
    for j in range(x.shape[1]):
        col = x[:, j]
        if np.ptp(col) == 0:
            continue
        if abs(col.mean()) >= 1e-9 or not 0.99 <= col.std() <= 1.01:
            problems.append(f"{name} column {j} is not standardized")
    return problems


def validate_city_graph(g: CityGraph, check_standardized: bool = True) -> list[str]:
    problems: list[str] = []
    if g.clusters.ndim != 2 or g.clusters.shape[0] < 1:
        problems.append(f"cluster matrix shape {g.clusters.shape}: need n >= 1 rows")
    if g.neighborhoods.ndim != 2 or g.neighborhoods.shape[0] < 1:
        problems.append(f"neighborhood matrix shape {g.neighborhoods.shape}: need m >= 1 rows")
    if problems:
        return problems
    n, m = g.n, g.m
    if len(g.cluster_ids) != n:
        problems.append(f"{len(g.cluster_ids)} cluster ids for {n} clusters")
    if len(g.neighborhood_ids) != m:
        problems.append(f"{len(g.neighborhood_ids)} neighborhood ids for {m} neighborhoods")
    if len(g.cluster_feature_names) != g.clusters.shape[1]:
        problems.append("cluster feature names do not match columns")
    if len(g.neighborhood_feature_names) != g.neighborhoods.shape[1]:
        problems.append("neighborhood feature names do not match columns")
    if not g.costs:
        problems.append("no cost matrices")
    if len(g.modes) != len(g.costs):
        problems.append(f"{len(g.modes)} mode names for {len(g.costs)} cost matrices")
    for k, c in enumerate(g.costs):
        c = np.asarray(c)
        if c.shape != (m, n):
            problems.append(f"cost matrix {k} has shape {c.shape}, expected {(m, n)}")
            continue
        if np.isnan(c).any():
            problems.append(f"cost matrix {k} contains NaN")
        elif np.any(c < COST_FLOOR):
            i, j = np.argwhere(c < COST_FLOOR)[0]
            problems.append(f"cost matrix {k} entry ({i}, {j}) = {c[i, j]} is below cost floor {COST_FLOOR}")
        elif not np.all(np.isfinite(c)):
            problems.append(f"cost matrix {k} contains infinite values")
    if g.env.ndim != 2 or g.env.shape[0] != len(g.dates):
        problems.append(f"env matrix shape {g.env.shape} does not match {len(g.dates)} dates")
    elif g.env.shape[1] != len(g.env_feature_names):
        problems.append("env feature names do not match columns")
    for prev, cur in zip(g.dates, g.dates[1:]):
        if (cur - prev).days != 1:
            problems.append(f"dates not contiguous between {prev} and {cur}")
            break
    for name, x in (("clusters", g.clusters), ("neighborhoods", g.neighborhoods), ("env", g.env)):
        if np.isnan(x).any() or not np.all(np.isfinite(x)):
            problems.append(f"{name} matrix contains NaN or infinite values")
        elif check_standardized and x.ndim == 2 and x.shape[0] > 1:
            problems.extend(_standardized_problems(name, x))
    return problems


def assemble_city_graph(
    clusters,
    neighborhoods,
    costs,
    env,
    stats: dict[str, ColumnStats] | None = None,
    *,
    cluster_ids=None,
    neighborhood_ids=None,
    cluster_feature_names=None,
    neighborhood_feature_names=None,
    env_feature_names=None,
    dates=None,
    modes=None,
) -> CityGraph:
    """Build a :class:`CityGraph` from already-standardized matrices.

    Every invariant is checked eagerly; all failures are reported together in
    one :class:`ValidationError`.
    """
    U = np.asarray(clusters, dtype=float)
    V = np.asarray(neighborhoods, dtype=float)
    W = np.asarray(env, dtype=float)
    if isinstance(costs, np.ndarray) and costs.ndim == 2:
        costs = [costs]
    costs = [np.asarray(c, dtype=float) for c in costs]
    n = U.shape[0] if U.ndim == 2 else 0
    m = V.shape[0] if V.ndim == 2 else 0
    if dates is None:
        start = dt.date(2019, 1, 1)
        dates = [start + dt.timedelta(days=d) for d in range(W.shape[0] if W.ndim else 0)]
    g = CityGraph(
        clusters=U,
        neighborhoods=V,
        costs=costs,
        env=W,
        cluster_ids=list(cluster_ids) if cluster_ids is not None else [str(i) for i in range(n)],
        neighborhood_ids=list(neighborhood_ids) if neighborhood_ids is not None else [str(j) for j in range(m)],
        cluster_feature_names=list(cluster_feature_names)
        if cluster_feature_names is not None
        else [f"u{j}" for j in range(U.shape[1] if U.ndim == 2 else 0)],
        neighborhood_feature_names=list(neighborhood_feature_names)
        if neighborhood_feature_names is not None
        else [f"v{j}" for j in range(V.shape[1] if V.ndim == 2 else 0)],
        env_feature_names=list(env_feature_names)
        if env_feature_names is not None
        else [f"w{j}" for j in range(W.shape[1] if W.ndim == 2 else 0)],
        dates=list(dates),
        modes=list(modes) if modes is not None else [f"mode{k}" for k in range(len(costs))],
        stats=dict(stats or {}),
    )
    problems = validate_city_graph(g)
    if problems:
        raise ValidationError(problems)
    return g


# --------------------------------------------------------------------------
# flows


@dataclass
class FlowTable:
    """Sparse daily counts keyed by (date, neighborhood index, cluster index)."""

    dates: np.ndarray  # datetime64[D]
    neighborhood: np.ndarray
    cluster: np.ndarray
    count: np.ndarray

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        self.neighborhood = np.asarray(self.neighborhood, dtype=np.int64)
        self.cluster = np.asarray(self.cluster, dtype=np.int64)
        self.count = np.asarray(self.count, dtype=np.int64)
        if np.any(self.count < 0):
            raise ValueError("flow counts must be nonnegative")
        keys = np.stack([self.dates.astype(np.int64), self.neighborhood, self.cluster], axis=1)
        if len(np.unique(keys, axis=0)) != len(keys):
            raise ValueError("duplicate (date, neighborhood, cluster) entries")

    def __len__(self) -> int:
        return len(self.count)

    @classmethod
    def from_dense(cls, dates: Sequence[dt.date], counts) -> "FlowTable":
        """``counts`` is (days, m, n); zero entries are dropped."""
        c = np.asarray(counts)
        d, j, i = np.nonzero(c)
        day = np.array(dates, dtype="datetime64[D]")
        return cls(day[d], j, i, c[d, j, i])

    def to_dense(self, dates: Sequence[dt.date], m: int, n: int) -> np.ndarray:
        """(days, m, n) integer array; absent keys are zero."""
        day = np.array(dates, dtype="datetime64[D]")
        pos = {d: k for k, d in enumerate(day.astype(np.int64))}
        out = np.zeros((len(day), m, n), dtype=np.int64)
        if np.any((self.neighborhood < 0) | (self.neighborhood >= m)) or np.any((self.cluster < 0) | (self.cluster >= n)):
            raise ValueError("flow index out of range")
        for d, j, i, c in zip(self.dates.astype(np.int64), self.neighborhood, self.cluster, self.count):
            if d not in pos:
                raise ValueError(f"flow date {np.datetime64(d, 'D')} outside the date range")
            out[pos[d], j, i] = c
        return out
