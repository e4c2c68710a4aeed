import random

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmm import crypto
from pmm.netmodel import (DelayFn, MatchNotice, Request, TripRecord, Vehicle, decode_trip, demand_matrix,
                          encode_trip, parse_network, period_counts, period_intervals, requests_from_tensor,
                          shortest_paths, traversals, trip_emissions, validate_demand, validate_trip)


def make_trip(**kw):
    base = dict(trip_id="t1", pickup_loc=1, dropoff_loc=3, request_time=1, match_time=2, pickup_time=3,
                dropoff_time=5, driver_wage=5.0, trip_fare=4.0, trajectory=((0, 2), (1, 3), (2, 4)),
                vehicle=Vehicle("v1", "sedan", 2.0), match_notice=None)
    base.update(kw)
    return TripRecord(**base)


def test_parse_network_and_text_round_trip(ring4):
    assert ring4.n == 4 and ring4.m == 8
    assert ring4.edges[5].src == 2 and ring4.edges[5].dst == 1
    again = parse_network(ring4.to_text())
    assert again == ring4


def test_parse_network_reports_line_numbers():
    with pytest.raises(ValueError, match="line 3"):
        parse_network("vertices 2\nedge 0 1 affine 1\nedge 0 1 cubic 2\n")
    with pytest.raises(ValueError):
        parse_network("vertices 2\nedge 0 5 affine 1\n")


def test_delay_functions():
    f = DelayFn.affine(2.0, 0.5)
    assert f(4.0) == 4.0 and f.derivative(1.0) == 0.5 and f.marginal(4.0) == 6.0
    g = DelayFn.bpr(1.0, 0.15, 2.0)
    x = 3.0
    assert g(x) == pytest.approx(1 + 0.15 * (1.5**4))
    eps = 1e-6
    assert g.derivative(x) == pytest.approx((g(x + eps) - g(x - eps)) / (2 * eps), rel=1e-6)
    with pytest.raises(ValueError):
        DelayFn.affine(0.0)
    with pytest.raises(ValueError):
        DelayFn.affine(1.0, -1.0)


def test_steps_are_whole_free_flow_times():
    net = parse_network("vertices 2\ndt 0.5\nedge 0 1 affine 1.2\nedge 1 0 affine 1e-9 1\n")
    assert net.steps(0) == 3 and net.steps(1) == 1


def test_incidence_matrix(ring4):
    inc = ring4.incidence
    assert inc.shape == (4, 8)
    assert (inc.sum(axis=0) == 0).all()
    assert inc[0, 0] == 1 and inc[1, 0] == -1


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 7), st.integers(0, 10**6))
def test_shortest_paths_match_networkx_oracle(n, seed):
    rng = random.Random(seed)
    lines = [f"vertices {n}"]
    for i in range(n):
        lines.append(f"edge {i} {(i + 1) % n} affine 1")
    for _ in range(2 * n):
        a, b = rng.sample(range(n), 2)
        lines.append(f"edge {a} {b} affine 1")
    net = parse_network("\n".join(lines))
    costs = [rng.uniform(0.1, 5.0) for _ in range(net.m)]
    g = nx.MultiDiGraph()
    for e in net.edges:
        g.add_edge(e.src, e.dst, weight=costs[e.id])
    dist, paths = shortest_paths(net, costs, 0)
    for v in range(n):
        assert dist[v] == pytest.approx(nx.shortest_path_length(g, 0, v, weight="weight"))
        assert sum(costs[e] for e in paths[v]) == pytest.approx(dist[v])


def test_trip_encoding_round_trip_and_canonical():
    rng = random.Random(1)
    keys = crypto.keygen(rng)
    t = make_trip(match_notice=MatchNotice.issue(keys.secret, "v1", 2))
    enc = encode_trip(t)
    assert decode_trip(enc) == t
    assert encode_trip(decode_trip(enc)) == enc
    assert encode_trip(make_trip(driver_wage=5.5)) != encode_trip(make_trip())
    with pytest.raises(ValueError):
        decode_trip(enc[:-3])
    with pytest.raises(ValueError):
        decode_trip(enc + b"x")


def test_validate_trip(ring4):
    assert validate_trip(make_trip(), ring4) == []
    assert "TimestampOrder" in validate_trip(make_trip(pickup_time=1, match_time=2, request_time=0), ring4)
    broken = make_trip(trajectory=((0, 2), (2, 3), (3, 4)))
    assert "BrokenPath" in validate_trip(broken, ring4)
    assert "UnknownEdge" in validate_trip(make_trip(trajectory=((99, 2),)), ring4)
    assert "NegativeAmount" in validate_trip(make_trip(trip_fare=-1.0), ring4)
    assert "EndpointMismatch" in validate_trip(make_trip(dropoff_loc=0), ring4)


def test_periods():
    t = make_trip(match_time=2, pickup_time=5, dropoff_time=9, trajectory=((0, 2), (1, 5)))
    assert period_intervals(t) == ((2, 5), (5, 9))
    empty = make_trip(match_time=3, pickup_time=3)
    (a, b), _ = period_intervals(empty)
    assert a == b
    tr = traversals(make_trip())
    assert len(tr) == 3
    assert tr == [(0, 2, 2), (1, 3, 3), (2, 4, 3)]  # entered at pickup time -> period 3
    assert period_counts(make_trip()) == (1, 2)
    assert trip_emissions(make_trip()) == 6.0


def test_demand_helpers():
    d = np.zeros((3, 3, 2))
    d[0, 1, 0] = 2
    d[2, 0, 1] = 1
    reqs = requests_from_tensor(d)
    assert [(r.origin, r.destination, r.time) for r in reqs] == [(0, 1, 0), (0, 1, 0), (2, 0, 1)]
    with pytest.raises(ValueError):
        requests_from_tensor(d + 0.5)
    with pytest.raises(ValueError):
        validate_demand(np.eye(3), 3)
    with pytest.raises(ValueError):
        validate_demand(-np.ones((3, 3)) + np.eye(3), 3)
    m = demand_matrix([make_trip(), make_trip(trip_id="t2")], 4)
    assert m[1, 3] == 2 and m.sum() == 2
    assert isinstance(reqs[0], Request)
