"""Business-cluster detection with DBSCAN and per-cluster features."""

from __future__ import annotations

from collections import Counter, defaultdict, deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .domain import MORPHOLOGIES, ClusterFeatures, Poi, pca_reduce

NOISE = -1


@dataclass(frozen=True)
class DbscanParams:
    eps: float = 200.0
    min_pts: int = 5

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.min_pts < 1:
            raise ValueError("min_pts must be at least 1")


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    cluster_members: dict[int, list[int]] = field(default_factory=dict)

    @classmethod
    def from_labels(cls, labels) -> "ClusterAssignment":
        labels = np.asarray(labels, dtype=np.int64)
        members: dict[int, list[int]] = defaultdict(list)
        for idx, lab in enumerate(labels):
            if lab != NOISE:
                members[int(lab)].append(idx)
        return cls(labels, dict(sorted(members.items())))

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_members)

    @property
    def noise(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.labels == NOISE)]


def _coords(points) -> np.ndarray:
    if len(points) and isinstance(points[0], Poi):
        return np.array([[p.x, p.y] for p in points], dtype=float)
    return np.asarray(points, dtype=float).reshape(-1, 2)


def region_queries(xy: np.ndarray, eps: float) -> list[np.ndarray]:
    """Sorted indices within ``eps`` (inclusive) of every point, via a uniform grid."""
    cells = np.floor(xy / eps).astype(np.int64)
    grid: dict[tuple[int, int], list[int]] = defaultdict(list)
    for idx, (cx, cy) in enumerate(cells):
        grid[(cx, cy)].append(idx)
    eps2 = eps * eps
    out = []
    for idx, (cx, cy) in enumerate(cells):
        cand = []
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                cand.extend(grid.get((cx + dx, cy + dy), ()))
        cand = np.array(sorted(cand), dtype=np.int64)
        d2 = np.sum((xy[cand] - xy[idx]) ** 2, axis=1)
        out.append(cand[d2 <= eps2])
    return out


def dbscan(points, params: DbscanParams = DbscanParams()) -> ClusterAssignment:
    """Density-based clustering with a deterministic border-point rule.

    A point is core when its eps-neighbourhood, itself included, holds at
    least ``min_pts`` points.  Clusters are connected components of core
    points, numbered in order of their lowest-index core point.  A border
    point joins the cluster of the lowest-index core point within eps, which
    makes the result independent of scan order.
    """
    xy = _coords(points)
    n = len(xy)
    if n == 0:
        return ClusterAssignment(np.zeros(0, dtype=np.int64), {})
    nbrs = region_queries(xy, params.eps)
    core = np.array([len(nb) >= params.min_pts for nb in nbrs])
    labels = np.full(n, NOISE, dtype=np.int64)
    next_id = 0
    for start in range(n):
        if not core[start] or labels[start] != NOISE:
            continue
        labels[start] = next_id
        queue = deque([start])
        while queue:
            p = queue.popleft()
            for q in nbrs[p]:
                if core[q] and labels[q] == NOISE:
                    labels[q] = next_id
                    queue.append(q)
        next_id += 1
    for p in np.flatnonzero(~core):
        cores = [q for q in nbrs[p] if core[q]]
        if cores:
            labels[p] = labels[cores[0]]
    return ClusterAssignment.from_labels(labels)


def merge_clusters(assignment: ClusterAssignment, merge_pairs: Sequence[tuple[int, int]]) -> ClusterAssignment:
    """Union the listed cluster pairs; ids are renumbered 0..k-1 by smallest old id."""
    ids = sorted(assignment.cluster_members)
    parent = {c: c for c in ids}

    def find(c):
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    for a, b in merge_pairs:
        for c in (a, b):
            if c not in parent:
                raise KeyError(f"unknown cluster id {c}")
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(c) for c in ids})
    new_id = {r: k for k, r in enumerate(roots)}
    labels = assignment.labels.copy()
    for c in ids:
        labels[assignment.labels == c] = new_id[find(c)]
    return ClusterAssignment.from_labels(labels)


def shannon_diversity(codes: Sequence[str]) -> float:
    """Entropy (nats) of the code histogram."""
    counts = np.array(list(Counter(codes).values()), dtype=float)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def naics_counts(members: Sequence[Poi]) -> Counter:
    return Counter(p.naics for p in members)


def featurize_cluster(
    members: Sequence[Poi],
    context: Mapping | None = None,
    morphology: str = "plaza",
    poi_counts_reduced=None,
) -> ClusterFeatures:
    """Features of one cluster.

    ``context`` carries the buffer overlays: ``land_use`` (8 proportions),
    ``bus_stop_count``, ``flood_zone`` (3 proportions) and ``total_area`` in
    square metres; missing entries default to zero.  The reduced POI-count
    vector comes from :func:`featurize_clusters`, which runs PCA over all
    clusters at once.
    """
    if not members:
        raise ValueError("cluster has no members")
    if morphology not in MORPHOLOGIES:
        raise ValueError(f"unknown morphology {morphology!r}; expected one of {MORPHOLOGIES}")
    context = dict(context or {})
    onehot = np.zeros(len(MORPHOLOGIES))
    onehot[MORPHOLOGIES.index(morphology)] = 1.0
    return ClusterFeatures(
        morphology=onehot,
        poi_counts_reduced=np.asarray(poi_counts_reduced if poi_counts_reduced is not None else [], dtype=float),
        poi_diversity=shannon_diversity([p.naics for p in members]),
        chain_ratio=sum(p.is_chain for p in members) / len(members),
        land_use=np.asarray(context.get("land_use", np.zeros(8)), dtype=float),
        bus_stop_count=float(context.get("bus_stop_count", 0.0)),
        flood_zone=np.asarray(context.get("flood_zone", np.zeros(3)), dtype=float),
        business_count=float(len(members)),
        total_area=float(context.get("total_area", 0.0)),
    )


def featurize_clusters(
    pois: Sequence[Poi],
    assignment: ClusterAssignment,
    contexts: Mapping[int, Mapping] | None = None,
    morphologies: Mapping[int, str] | None = None,
    target_variance: float = 0.9651,
):
    """Features for every cluster, with POI counts PCA-reduced jointly.

    Returns ``(features, basis, codes)`` where ``codes`` orders the columns of
    the count matrix handed to PCA.
    """
    contexts = contexts or {}
    morphologies = morphologies or {}
    cluster_ids = sorted(assignment.cluster_members)
    groups = [[pois[k] for k in assignment.cluster_members[c]] for c in cluster_ids]
    codes = sorted({p.naics for g in groups for p in g})
    counts = np.array([[naics_counts(g).get(code, 0) for code in codes] for g in groups], dtype=float)
    if len(groups) >= 2:
        reduced, basis = pca_reduce(counts, target_variance)
    else:
        reduced, basis = np.zeros((len(groups), 0)), None
    feats = [
        featurize_cluster(g, contexts.get(c), morphologies.get(c, "plaza"), reduced[k])
        for k, (c, g) in enumerate(zip(cluster_ids, groups))
    ]
    return feats, basis, codes


def centroids(points, assignment: ClusterAssignment) -> dict[int, tuple[float, float]]:
    xy = _coords(points)
    return {c: tuple(xy[idx].mean(axis=0)) for c, idx in assignment.cluster_members.items()}
