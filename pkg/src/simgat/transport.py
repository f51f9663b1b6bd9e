"""Multi-modal road networks and travel-time cost matrices."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from .domain import COST_FLOOR

MODES = ("drive", "walk", "transit")
DEFAULT_ROAD_SPEED_KMH = 50.0
WALK_SPEED_KMH = 5.0
POLICIES = {
    "drive-only": ("drive",),
    "walk+transit": ("walk", "transit"),
}


class NoPathError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    source: Hashable
    target: Hashable
    length_m: float
    speed_kmh: float | None = None
    modes: frozenset = frozenset({"drive", "walk"})
    directed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "modes", frozenset(self.modes))


@dataclass
class RoadNetwork:
    nodes: dict = field(default_factory=dict)  # id -> (x, y) metres
    edges: list[Edge] = field(default_factory=list)
    boarding_penalty_min: float = 0.0

    def __post_init__(self):
        problems = []
        for e in self.edges:
            if e.source not in self.nodes or e.target not in self.nodes:
                problems.append(f"edge {e.source}->{e.target} references a missing node")
            if not e.length_m > 0:
                problems.append(f"edge {e.source}->{e.target} has nonpositive length {e.length_m}")
            if e.speed_kmh is not None and not e.speed_kmh > 0:
                problems.append(f"edge {e.source}->{e.target} has nonpositive speed")
            unknown = set(e.modes) - set(MODES)
            if unknown or not e.modes:
                problems.append(f"edge {e.source}->{e.target} has invalid modes {sorted(e.modes)}")
        if problems:
            raise ValueError("; ".join(problems))


def edge_time(edge: Edge, mode: str, boarding_penalty_min: float = 0.0) -> float:
    """Minutes to traverse ``edge`` in ``mode``."""
    if mode not in edge.modes:
        raise ValueError(f"mode {mode!r} not allowed on edge {edge.source}->{edge.target}")
    if mode == "walk":
        speed = WALK_SPEED_KMH
    else:
        speed = edge.speed_kmh if edge.speed_kmh is not None else DEFAULT_ROAD_SPEED_KMH
    minutes = edge.length_m / (speed * 1000.0 / 60.0)
    if mode == "transit":
        minutes += boarding_penalty_min
    return minutes


def _split_modes(net: RoadNetwork):
    for e in net.edges:
        for mode in sorted(e.modes):
            yield mode, Edge(e.source, e.target, e.length_m, e.speed_kmh, frozenset({mode}), e.directed)


def _edge_key(e: Edge, mode: str):
    a, b = e.source, e.target
    if not e.directed:
        a, b = sorted((a, b), key=repr)
    return (a, b, e.directed, mode)


def compose_networks(layers: Sequence[RoadNetwork], tolerance_m: float = 1.0) -> RoadNetwork:
    """Union of network layers.

    A node id present in several layers denotes one physical point; its
    coordinates must agree within ``tolerance_m``.  Duplicate edges for the
    same (endpoints, direction, mode) keep the faster one.  Edges come back
    with a single mode each.
    """
    nodes: dict = {}
    for layer in layers:
        for nid, xy in layer.nodes.items():
            if nid in nodes and math.dist(nodes[nid], xy) > tolerance_m:
                raise ValueError(f"node {nid!r} has conflicting coordinates {nodes[nid]} vs {tuple(xy)}")
            nodes.setdefault(nid, tuple(xy))
    best: dict = {}
    for layer in layers:
        for mode, e in _split_modes(layer):
            key = _edge_key(e, mode)
            if key not in best or edge_time(e, mode) < edge_time(best[key], mode):
                best[key] = e
    penalty = max((l.boarding_penalty_min for l in layers), default=0.0)
    return RoadNetwork(nodes, [best[k] for k in sorted(best, key=repr)], penalty)


def _adjacency(net: RoadNetwork, policy: str, reverse: bool = False) -> dict:
    if policy not in POLICIES:
        raise ValueError(f"unknown mode policy {policy!r}; expected one of {sorted(POLICIES)}")
    allowed = POLICIES[policy]
    adj: dict = {nid: [] for nid in net.nodes}
    for e in net.edges:
        times = [edge_time(e, mode, net.boarding_penalty_min) for mode in allowed if mode in e.modes]
        if not times:
            continue
        w = min(times)
        a, b = (e.target, e.source) if reverse else (e.source, e.target)
        adj[a].append((b, w))
        if not e.directed:
            adj[b].append((a, w))
    return adj


def _dijkstra(adj: dict, source) -> dict:
    dist = {source: 0.0}
    heap = [(0.0, 0, source)]
    counter = 1
    done = set()
    while heap:
        d, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in adj[u]:
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                heapq.heappush(heap, (nd, counter, v))
                counter += 1
    return dist


def shortest_times(net: RoadNetwork, source, policy: str = "drive-only", reverse: bool = False) -> dict:
    """Minutes from ``source`` to every reachable node (to it, if ``reverse``)."""
    if source not in net.nodes:
        raise KeyError(f"unknown node {source!r}")
    return _dijkstra(_adjacency(net, policy, reverse), source)


def shortest_time(net: RoadNetwork, source, target, policy: str = "drive-only") -> float:
    if target not in net.nodes:
        raise KeyError(f"unknown node {target!r}")
    dist = shortest_times(net, source, policy)
    if target not in dist:
        raise NoPathError(f"no path from {source!r} to {target!r} under {policy}")
    return dist[target]


def admissible_nodes(net: RoadNetwork, policy: str) -> list:
    allowed = set(POLICIES[policy])
    touched = set()
    for e in net.edges:
        if allowed & e.modes:
            touched.update((e.source, e.target))
    return [nid for nid in _sorted_ids(net.nodes) if nid in touched]


def _sorted_ids(ids: Iterable) -> list:
    ids = list(ids)
    try:
        return sorted(ids)
    except TypeError:
        return sorted(ids, key=repr)


def snap(net: RoadNetwork, points, policy: str) -> list:
    """Nearest admissible node per point; ties go to the lowest node id."""
    cand = admissible_nodes(net, policy)
    if not cand:
        raise ValueError(f"no nodes admissible under {policy}")
    xy = np.array([net.nodes[c] for c in cand], dtype=float)
    out = []
    for p in np.asarray(points, dtype=float).reshape(-1, 2):
        d2 = np.sum((xy - p) ** 2, axis=1)
        out.append(cand[int(np.argmin(d2))])
    return out


@dataclass
class CostMatrixSet:
    matrices: dict  # mode name -> (m, n) minutes
    cost_floor: float = COST_FLOOR

    @property
    def modes(self) -> list[str]:
        return list(self.matrices)

    @property
    def drive(self) -> np.ndarray:
        return self.matrices["drive"]

    @property
    def walk_transit(self) -> np.ndarray:
        return self.matrices["walk_transit"]

    def to_json(self) -> dict:
        first = next(iter(self.matrices.values()))
        return {
            "modes": self.modes,
            "matrices": [np.asarray(c).reshape(-1).tolist() for c in self.matrices.values()],
            "m": int(first.shape[0]),
            "n": int(first.shape[1]),
            "cost_floor": self.cost_floor,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CostMatrixSet":
        m, n = obj["m"], obj["n"]
        mats = {mode: np.array(flat, dtype=float).reshape(m, n) for mode, flat in zip(obj["modes"], obj["matrices"])}
        return cls(mats, obj.get("cost_floor", COST_FLOOR))


MATRIX_POLICIES = {"drive": "drive-only", "walk_transit": "walk+transit"}


def build_cost_matrices(
    net: RoadNetwork,
    neighborhood_centroids,
    cluster_centroids,
    policies: dict | None = None,
    cost_floor: float = COST_FLOOR,
) -> CostMatrixSet:
    """Shortest travel times between snapped centroids, one matrix per policy.

    Rows are neighborhoods, columns clusters.  Dijkstra runs once per node on
    the smaller side (on the reversed graph when that side is the clusters).
    Every unreachable pair is collected into one :class:`NoPathError`.
    """
    policies = policies or MATRIX_POLICIES
    out = {}
    failures = []
    for name, policy in policies.items():
        rows = snap(net, neighborhood_centroids, policy)
        cols = snap(net, cluster_centroids, policy)
        m, n = len(rows), len(cols)
        mat = np.full((m, n), np.nan)
        if m <= n:
            for j, src in enumerate(rows):
                dist = shortest_times(net, src, policy)
                mat[j] = [dist.get(c, np.nan) for c in cols]
        else:
            for i, dst in enumerate(cols):
                dist = shortest_times(net, dst, policy, reverse=True)
                mat[:, i] = [dist.get(r, np.nan) for r in rows]
        for j, i in np.argwhere(np.isnan(mat)):
            failures.append(f"{name}: neighborhood {j} -> cluster {i}")
        out[name] = np.maximum(mat, cost_floor)
    if failures:
        raise NoPathError("unreachable pairs: " + ", ".join(failures))
    return CostMatrixSet(out, cost_floor)
