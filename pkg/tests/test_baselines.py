import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmfl.aco import optimize_routes
from swarmfl.baselines import (
    Rules,
    dijkstra_routing,
    exhaustive_selection_oracle,
    random_selection,
    rule_based_selection,
    static_shortest_routing,
)
from swarmfl.config import AcoSpec, TopologySpec
from swarmfl.domain import Device, build_topology, make_graph
from swarmfl.errors import NotEnoughEligible, NoRouteFound, TooManyDevices
from swarmfl.pso import FitnessContext


def test_random_selection_edge_cases():
    assert random_selection([4, 2, 9], 3, seed=0) == (2, 4, 9)
    assert random_selection([7], 1, seed=3) == (7,)
    with pytest.raises(NotEnoughEligible):
        random_selection([1, 2], 3, 0)
    with pytest.raises(NotEnoughEligible):
        random_selection([1, 2], 0, 0)
    assert random_selection(range(10), 4, 5) == random_selection(range(10), 4, 5)


def test_random_selection_is_uniform():
    n, k, seeds = 8, 3, 10000
    counts = np.zeros(n)
    for s in range(seeds):
        for d in random_selection(range(n), k, s):
            counts[d] += 1
    p = k / n
    sigma = math.sqrt(seeds * p * (1 - p))
    assert np.all(np.abs(counts - seeds * p) <= 3 * sigma)


def fleet(batteries):
    return [Device(i, 1e7, b, 0.05, 2.0, (0.0, 0.0), i) for i, b in enumerate(batteries)]


def test_rule_based_examples():
    devs = fleet([10.0, 50.0, 0.0, 80.0])
    counts = {0: 5, 1: 0, 2: 3, 3: 9}
    assert rule_based_selection(devs, counts, Rules(0, 0)) == (0, 1, 2, 3)
    assert rule_based_selection(devs, counts, Rules(min_battery_j=1000)) == ()
    rules = Rules(min_battery_j=20.0, min_samples=1)
    direct = tuple(d.id for d in devs if d.battery_j >= 20.0 and counts[d.id] >= 1)
    assert rule_based_selection(devs, counts, rules) == direct == (3,)


@settings(max_examples=30, deadline=None)
@given(bat=st.lists(st.floats(0, 100), min_size=1, max_size=15), thr=st.floats(0, 100), perm=st.randoms())
def test_rule_based_is_order_independent(bat, thr, perm):
    devs = fleet(bat)
    counts = {d.id: d.id % 3 for d in devs}
    shuffled = list(devs)
    perm.shuffle(shuffled)
    rules = Rules(thr, 1)
    assert rule_based_selection(devs, counts, rules) == rule_based_selection(shuffled, counts, rules)


def test_exhaustive_oracle_limits():
    n = 21
    ctx = FitnessContext(tuple(range(n)), np.ones(n), np.ones(n), np.eye(n), np.ones(n, bool))
    with pytest.raises(TooManyDevices):
        exhaustive_selection_oracle(ctx)
    ctx = FitnessContext((0, 1), np.ones(2), np.ones(2), np.eye(2), np.zeros(2, bool))
    with pytest.raises(NotEnoughEligible):
        exhaustive_selection_oracle(ctx)


def test_exhaustive_oracle_breaks_ties_lexicographically():
    ctx = FitnessContext((3, 5, 8), np.ones(3), np.ones(3), np.zeros((3, 3)), np.ones(3, bool))
    assert exhaustive_selection_oracle(ctx).subset == (3,)


def test_dijkstra_single_path_and_cheap_detour():
    line = make_graph([(0, "device"), (1, "relay"), (2, "cloud")], [(0, 1, 10, 1), (1, 2, 10, 1)], 2)
    assert dijkstra_routing(0, line, 10).hops == (0, 1, 2)
    # direct 0-2 costs 10/10 = 1.0 s; detour 0-1-2 costs 10/100 + 10/100 = 0.2 s
    tri = make_graph([(0, "device"), (1, "relay"), (2, "cloud")], [(0, 2, 10, 0), (0, 1, 100, 0), (1, 2, 100, 0)], 2)
    r = dijkstra_routing(0, tri, 10)
    assert r.hops == (0, 1, 2) and r.cost == pytest.approx(0.2, abs=1e-12)
    assert static_shortest_routing(0, tri, 10).hops == (0, 2)


def test_dijkstra_matches_networkx_and_dominates_aco():
    for s in range(5):
        g = build_topology(TopologySpec(n_devices=30), s)
        h = nx.Graph()
        for ln in g.links:
            h.add_edge(ln.src, ln.dst, w=10.0 / ln.bandwidth_mbps + ln.latency_ms / 1000)
        aco = optimize_routes(g.device_ids[:5], g, AcoSpec(n_iters=10), "bandwidth", s)
        for d in g.device_ids[:5]:
            r = dijkstra_routing(d, g, 10.0)
            assert r.cost == pytest.approx(nx.dijkstra_path_length(h, d, g.cloud_id, weight="w"), abs=1e-12)
            assert r.cost <= aco.routes[d].cost + 1e-12
            assert static_shortest_routing(d, g, 10.0).n_hops == nx.shortest_path_length(h, d, g.cloud_id)


def test_unreachable_cloud():
    g = make_graph([(0, "device"), (1, "device"), (2, "cloud")], [(0, 1, 10, 1)], 2)
    with pytest.raises(NoRouteFound):
        dijkstra_routing(0, g, 1)
    with pytest.raises(NoRouteFound):
        static_shortest_routing(0, g, 1)
