"""GCN and GraphSAGE comparison models over the cluster-only graph.

Both stack two graph layers of width ``h`` on the cluster features and map
each cluster's final state to a row of ``m`` log-rates.  Cluster features
are their only input, so their prediction is the same on every day.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .domain import CityGraph
from .model import SimGatConfig, _glorot


def knn_adjacency(xy, k: int = 5) -> np.ndarray:
    """Symmetric 0/1 adjacency linking each point to its ``k`` nearest others.

    Distance ties go to the lower index.  No self loops.
    """
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    A = np.zeros((n, n))
    if n < 2:
        return A
    d = np.linalg.norm(xy[:, None, :] - xy[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    kk = min(k, n - 1)
    for i in range(n):
        nbrs = np.argsort(d[i], kind="stable")[:kk]
        A[i, nbrs] = 1.0
    return np.maximum(A, A.T)


def cluster_adjacency(city: CityGraph, k: int = 5) -> np.ndarray:
    """kNN adjacency from cluster centroids.

    Without centroids on the graph, clusters are placed by their column of
    travel times to every neighborhood (a proxy for location).
    """
    if city.cluster_xy is not None:
        return knn_adjacency(city.cluster_xy, k)
    return knn_adjacency(np.hstack([np.asarray(c).T for c in city.costs]), k)


def gcn_propagation(A) -> np.ndarray:
    """D^-1/2 (A + I) D^-1/2."""
    A = np.asarray(A, dtype=float)
    Ah = A + np.eye(len(A))
    d = 1.0 / np.sqrt(Ah.sum(axis=1))
    return Ah * d[:, None] * d[None, :]


def mean_aggregation(A) -> np.ndarray:
    """Row-normalized adjacency; an isolated node gets a zero row."""
    A = np.asarray(A, dtype=float)
    deg = A.sum(axis=1, keepdims=True)
    return np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)


class GraphBaseline:
    """Shared parameter handling for the two baselines."""

    kind = ""

    def __init__(self, config: SimGatConfig, n_features: int, n_neighborhoods: int, propagation,
                 rate_prior: float = 1.0, params: dict | None = None):
        self.config = config
        self.l = n_features
        self.m = n_neighborhoods
        self.P = np.asarray(propagation, dtype=float)
        if params is None:
            params = self._init_params(rate_prior)
        self.params = {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        for name, p in self.params.items():
            p.requires_grad = True
            p.name = name

    def _layer_shapes(self) -> dict:
        raise NotImplementedError

    def _init_params(self, rate_prior):
        rng = np.random.default_rng(self.config.seed)
        p = {}
        for name, shape in self._layer_shapes().items():
            p[name] = _glorot(rng, shape[0], shape[1], shape) if len(shape) == 2 else np.zeros(shape)
        p["b_head"] = np.full(self.m, np.log(rate_prior))
        return p

    def parameters(self) -> dict:
        return self.params

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state) -> None:
        for k, v in state.items():
            self.params[k].data[...] = v

    def hidden(self, X) -> Tensor:
        raise NotImplementedError

    def log_rate(self, X) -> Tensor:
        """(n, m) log-rates."""
        return self.hidden(X) @ self.params["W_head"] + self.params["b_head"]

    def predict(self, X) -> np.ndarray:
        return np.exp(self.log_rate(X).data)

    def predict_batch(self, data, days) -> Tensor:
        eta = self.log_rate(data.U)
        zeros = np.zeros((len(np.asarray(days)), 1, 1))
        return ad.exp(eta.reshape(1, *eta.shape) + zeros)

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


class GCN(GraphBaseline):
    """H' = leaky_relu(P H W + b) with P the normalized propagation matrix."""

    kind = "gcn"

    def _layer_shapes(self):
        h = self.config.hidden_dim
        return {"W1": (self.l, h), "b1": (h,), "W2": (h, h), "b2": (h,), "W_head": (h, self.m)}

    def hidden(self, X) -> Tensor:
        p, slope = self.params, self.config.leaky_slope
        H = ad.leaky_relu(self.P @ (Tensor(X) @ p["W1"]) + p["b1"], slope)
        return ad.leaky_relu(self.P @ (H @ p["W2"]) + p["b2"], slope)


class GraphSage(GraphBaseline):
    """H' = leaky_relu(H W_self + (P H) W_nbr + b) with mean aggregation P."""

    kind = "graphsage"

    def _layer_shapes(self):
        h, l = self.config.hidden_dim, self.l
        return {
            "W1_self": (l, h),
            "W1_nbr": (l, h),
            "b1": (h,),
            "W2_self": (h, h),
            "W2_nbr": (h, h),
            "b2": (h,),
            "W_head": (h, self.m),
        }

    def hidden(self, X) -> Tensor:
        p, slope = self.params, self.config.leaky_slope
        X = Tensor(X)
        H = ad.leaky_relu(X @ p["W1_self"] + (self.P @ X) @ p["W1_nbr"] + p["b1"], slope)
        return ad.leaky_relu(H @ p["W2_self"] + (self.P @ H) @ p["W2_nbr"] + p["b2"], slope)


def baseline_gcn(city: CityGraph, config: SimGatConfig, rate_prior: float = 1.0, adjacency=None) -> GCN:
    A = cluster_adjacency(city) if adjacency is None else adjacency
    return GCN(config, city.clusters.shape[1], city.m, gcn_propagation(A), rate_prior)


def baseline_graphsage(city: CityGraph, config: SimGatConfig, rate_prior: float = 1.0, adjacency=None) -> GraphSage:
    A = cluster_adjacency(city) if adjacency is None else adjacency
    return GraphSage(config, city.clusters.shape[1], city.m, mean_aggregation(A), rate_prior)


def train_baselines(city: CityGraph, data, config: SimGatConfig) -> dict:
    """Train both baselines with the SIM-GAT loop; returns {kind: (model, report)}."""
    from .training import split_days, train

    tr, _ = split_days(data.target_days, config.val_fraction, config.seed)
    prior = max(float(data.targets(tr).mean()), 1e-3)
    out = {}
    for build in (baseline_gcn, baseline_graphsage):
        model = build(city, config, prior)
        out[model.kind] = (model, train(model, data, config))
    return out
