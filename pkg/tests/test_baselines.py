import numpy as np
import pytest

from simgat import autodiff as ad
from simgat.baselines import (
    GCN,
    GraphSage,
    baseline_gcn,
    baseline_graphsage,
    cluster_adjacency,
    gcn_propagation,
    knn_adjacency,
    mean_aggregation,
    train_baselines,
)
from simgat.model import SimGatConfig
from simgat.training import evaluate, make_dataset, split_days


def test_knn_adjacency_is_symmetric_without_self_loops():
    rng = np.random.default_rng(0)
    A = knn_adjacency(rng.uniform(size=(12, 2)), 3)
    np.testing.assert_array_equal(A, A.T)
    assert np.all(np.diag(A) == 0) and np.all(A.sum(axis=1) >= 3)


def test_knn_ties_go_to_lower_index():
    # 0 is equidistant from 1 and 2; 2's own nearest neighbor is 3
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.2, 0.0]])
    A = knn_adjacency(xy, 1)
    assert A[0, 1] == 1 and A[0, 2] == 0


def test_gcn_propagation_is_symmetric_normalized():
    A = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], float)
    P = gcn_propagation(A)
    deg = (A + np.eye(3)).sum(axis=1)
    np.testing.assert_allclose(P, (A + np.eye(3)) / np.sqrt(np.outer(deg, deg)))


def test_isolated_node_aggregates_to_zero():
    A = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]], float)
    P = mean_aggregation(A)
    np.testing.assert_array_equal(P[2], 0.0)
    cfg = SimGatConfig(hidden_dim=3)
    X = np.random.default_rng(1).normal(size=(3, 4))
    sage = GraphSage(cfg, 4, 2, P)
    p = sage.params
    own = ad.leaky_relu(X[2] @ p["W1_self"].data + p["b1"].data).data
    own = ad.leaky_relu(own @ p["W2_self"].data + p["b2"].data).data
    np.testing.assert_allclose(sage.hidden(X).data[2], own, rtol=1e-13)


def test_gcn_on_identity_propagation_is_an_mlp():
    cfg = SimGatConfig(hidden_dim=3)
    X = np.random.default_rng(2).normal(size=(4, 5))
    gcn = GCN(cfg, 5, 6, np.eye(4), rate_prior=2.0)
    p = {k: v.data for k, v in gcn.params.items()}
    lr = lambda z: np.where(z > 0, z, 0.2 * z)  # noqa: E731
    H = lr(lr(X @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"])
    np.testing.assert_allclose(gcn.log_rate(X).data, H @ p["W_head"] + np.log(2.0), rtol=1e-13)


def test_cost_profile_adjacency_without_centroids(desk):
    city = desk.city
    saved = city.cluster_xy
    try:
        city.cluster_xy = None
        A = cluster_adjacency(city, 2)
    finally:
        city.cluster_xy = saved
    assert A.shape == (city.n, city.n) and np.all(A == A.T)


def test_baselines_train_to_finite_loss(desk):
    cfg = SimGatConfig(hidden_dim=3, lstm_window=3, epochs=5, seed=0)
    data = make_dataset(desk.city, desk.flows, cfg)
    out = train_baselines(desk.city, data, cfg)
    assert set(out) == {"gcn", "graphsage"}
    _, va = split_days(data.target_days, cfg.val_fraction, cfg.seed)
    for model, rep in out.values():
        assert np.isfinite(rep.best_val_loss) and rep.best_val_loss <= rep.initial_val_loss
        assert evaluate(model, data, va) == pytest.approx(rep.best_val_loss)
        rate = model.predict_batch(data, va).data
        np.testing.assert_array_equal(rate[0], rate[-1])  # no day dependence


def test_builders_use_city_dimensions(desk):
    cfg = SimGatConfig(hidden_dim=2)
    g, s = baseline_gcn(desk.city, cfg), baseline_graphsage(desk.city, cfg)
    assert g.predict(desk.city.clusters).shape == (desk.city.n, desk.city.m)
    assert s.n_params() == sum(p.size for p in s.params.values())
