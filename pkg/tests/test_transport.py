import numpy as np
import pytest

from oracles import floyd_warshall, random_network
from simgat.transport import (
    POLICIES,
    CostMatrixSet,
    Edge,
    NoPathError,
    RoadNetwork,
    build_cost_matrices,
    compose_networks,
    edge_time,
    shortest_time,
    shortest_times,
    snap,
)


def _minutes(e, mode, penalty=0.0):
    kmh = 5.0 if mode == "walk" else (e.speed_kmh or 50.0)
    return e.length_m / 1000.0 / kmh * 60.0 + (penalty if mode == "transit" else 0.0)


def _arcs(net, policy):
    arcs = []
    for e in net.edges:
        times = [_minutes(e, m, net.boarding_penalty_min) for m in POLICIES[policy] if m in e.modes]
        if times:
            arcs.append((e.source, e.target, min(times)))
            if not e.directed:
                arcs.append((e.target, e.source, min(times)))
    return arcs


def test_walk_edge_of_one_kilometre_takes_twelve_minutes():
    e = Edge("a", "b", 1000.0, None, {"walk"})
    assert edge_time(e, "walk") == pytest.approx(12.0, abs=1e-12)
    assert edge_time(Edge("a", "b", 1000.0, None, {"drive"}), "drive") == pytest.approx(1.2)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("policy", sorted(POLICIES))
def test_dijkstra_matches_floyd_warshall(seed, policy):
    net = random_network(np.random.default_rng(seed), 25)
    oracle = floyd_warshall(list(net.nodes), _arcs(net, policy))
    for s in net.nodes:
        dist = shortest_times(net, s, policy)
        for t in net.nodes:
            want = oracle[(s, t)]
            if np.isinf(want):
                assert t not in dist
            else:
                assert abs(dist[t] - want) < 1e-9


def test_reverse_search_gives_times_to_the_source():
    net = random_network(np.random.default_rng(3), 20, p_edge=0.3, directed_share=0.5)
    fwd = {s: shortest_times(net, s) for s in net.nodes}
    for t in net.nodes:
        rev = shortest_times(net, t, reverse=True)
        for s, d in rev.items():
            assert fwd[s][t] == pytest.approx(d, abs=1e-9)


def test_triangle_inequality_on_snapped_nodes():
    net = random_network(np.random.default_rng(8), 30, p_edge=0.3)
    d = {s: shortest_times(net, s) for s in net.nodes}
    rng = np.random.default_rng(0)
    for a, b, v in rng.choice(list(net.nodes), (200, 3)):
        if b in d[a] and v in d[a] and b in d[v]:
            assert d[a][b] <= d[a][v] + d[v][b] + 1e-9


def test_adding_transit_never_slows_walking():
    rng = np.random.default_rng(11)
    net = random_network(rng, 25, p_edge=0.3)
    walk_only = RoadNetwork(net.nodes, [Edge(e.source, e.target, e.length_m, e.speed_kmh, e.modes - {"transit"}, e.directed)
                                        for e in net.edges if e.modes - {"transit"}])
    for s in net.nodes:
        both = shortest_times(net, s, "walk+transit")
        walk = shortest_times(walk_only, s, "walk+transit")
        for t, w in walk.items():
            assert both[t] <= w + 1e-12


def test_boarding_penalty_applies_per_transit_edge():
    nodes = {0: (0, 0), 1: (1000, 0), 2: (2000, 0)}
    edges = [Edge(0, 1, 1000, 30, {"transit"}), Edge(1, 2, 1000, 30, {"transit"})]
    assert shortest_time(RoadNetwork(nodes, edges, 1.5), 0, 2, "walk+transit") == pytest.approx(4 + 3.0)


def test_snap_ties_go_to_lowest_node_id():
    nodes = {5: (0.0, 10.0), 2: (0.0, -10.0), 9: (100.0, 0.0)}
    net = RoadNetwork(nodes, [Edge(5, 2, 20), Edge(2, 9, 100)])
    assert snap(net, [[0.0, 0.0]], "drive-only") == [2]


def test_unreachable_pairs_are_reported_together():
    nodes = {0: (0, 0), 1: (100, 0), 2: (5000, 0), 3: (5100, 0)}
    net = RoadNetwork(nodes, [Edge(0, 1, 100), Edge(2, 3, 100)])
    with pytest.raises(NoPathError, match="unreachable") as err:
        build_cost_matrices(net, [[0, 0]], [[5000, 0], [5100, 0]], {"drive": "drive-only"})
    assert "cluster 0" in str(err.value) and "cluster 1" in str(err.value)


def test_cost_matrices_respect_floor_and_round_trip():
    net = random_network(np.random.default_rng(1), 15, p_edge=0.5)
    for e in net.edges:
        object.__setattr__(e, "modes", frozenset({"drive", "walk", "transit"}))
    xy = np.array(list(net.nodes.values()))
    costs = build_cost_matrices(net, xy[:4], xy[4:9])
    assert costs.drive.shape == (4, 5) and np.all(costs.drive >= 1.0)
    back = CostMatrixSet.from_json(costs.to_json())
    np.testing.assert_array_equal(back.walk_transit, costs.walk_transit)


def test_compose_rejects_conflicting_coordinates():
    a = RoadNetwork({0: (0, 0), 1: (10, 0)}, [Edge(0, 1, 10)])
    b = RoadNetwork({0: (50, 0), 2: (20, 0)}, [Edge(0, 2, 10)])
    with pytest.raises(ValueError, match="conflicting"):
        compose_networks([a, b])


def test_compose_keeps_faster_duplicate():
    a = RoadNetwork({0: (0, 0), 1: (1000, 0)}, [Edge(0, 1, 1000, 30, {"drive"})])
    b = RoadNetwork({0: (0, 0), 1: (1000, 0)}, [Edge(1, 0, 1000, 60, {"drive"})])
    net = compose_networks([a, b])
    assert len(net.edges) == 1 and shortest_time(net, 0, 1) == pytest.approx(1.0)


def test_network_validation_lists_problems():
    with pytest.raises(ValueError, match="missing node"):
        RoadNetwork({0: (0, 0)}, [Edge(0, 7, 10)])
    with pytest.raises(ValueError, match="nonpositive length"):
        RoadNetwork({0: (0, 0), 1: (1, 0)}, [Edge(0, 1, 0.0)])
