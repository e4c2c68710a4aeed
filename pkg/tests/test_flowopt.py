import math
import random

import numpy as np
import pytest

from pmm.flowopt import (AddEdge, AddTrainEdge, Infeasible, MpObjective, Project, SetDelay, SteadyFlow,
                         TimeVaryingFlow, check_kkt, check_lp_certificate, check_steady_feasibility,
                         check_timevarying_feasibility, compute_tolls, format_steady_flow, parse_project,
                         parse_steady_flow, solve_mp_routing, solve_social_optimum_tt, solve_sop,
                         solve_timevarying_routing, verify_sop)
from pmm.flowopt.social import path_costs, shortest_potentials
from pmm.netmodel import DelayFn, Edge, Network, parse_network

from conftest import pigou
from oracles import (random_demand, random_network, simple_paths, social_optimum_value, steady_min_cost,
                     timevarying_optimum)

TWO_NODE = "vertices 2\nedge 0 1 affine 1\nedge 1 0 affine 1\n"


# -- steady state ----------------------------------------------------------

def test_zero_demand_zero_flow_is_feasible(ring4):
    flow = SteadyFlow({}, np.zeros(ring4.m))
    assert check_steady_feasibility(flow, ring4, np.zeros((4, 4))).feasible


def test_two_node_cycle():
    net = parse_network(TWO_NODE)
    demand = np.array([[0, 1], [0, 0]])
    flow = SteadyFlow({(0, 1): np.array([1.0, 0.0])}, np.array([0.0, 1.0]))
    assert check_steady_feasibility(flow, net, demand).feasible
    flow.rebalancing[:] = 0.0
    rep = check_steady_feasibility(flow, net, demand)
    assert not rep.feasible
    assert rep.residuals["conservation"] == pytest.approx(1.0)


def test_negative_flow_and_bad_shapes_rejected():
    net = parse_network(TWO_NODE)
    demand = np.array([[0, 1], [0, 0]])
    flow = SteadyFlow({(0, 1): np.array([1.0, 0.0])}, np.array([-0.5, 0.5]))
    assert not check_steady_feasibility(flow, net, demand)
    with pytest.raises(ValueError):
        check_steady_feasibility(SteadyFlow({}, np.zeros(3)), net, demand)


def test_parallel_edges_prefer_cheaper():
    net = Network(2, (Edge(0, 0, 1, DelayFn.affine(1.0), 1.0), Edge(1, 0, 1, DelayFn.affine(1.0), 2.0),
                      Edge(2, 1, 0, DelayFn.affine(1.0), 1.0)), 1.0, 10)
    sol = solve_mp_routing(net, np.array([[0, 3], [0, 0]]), MpObjective(fare=2.0))
    assert sol.flow.passenger[(0, 1)] == pytest.approx([3.0, 0.0, 0.0])
    assert sol.flow.rebalancing == pytest.approx([0.0, 0.0, 3.0])
    assert sol.objective == pytest.approx(2.0 * 3 - 6.0)


def test_unreachable_demand_is_infeasible():
    net = parse_network("vertices 3\nedge 0 1 affine 1\nedge 1 0 affine 1\n")
    with pytest.raises(Infeasible):
        solve_mp_routing(net, np.array([[0, 0, 1], [0, 0, 0], [0, 0, 0]]))


def test_lp_certificate_detects_suboptimal_primal(ring4):
    demand = np.zeros((4, 4))
    demand[0, 2] = 2
    sol = solve_mp_routing(ring4, demand)
    obj = MpObjective()
    assert check_lp_certificate(ring4, demand, obj, sol.certificate).feasible
    bad = sol.certificate.primal.copy()
    bad[-ring4.m:] += 1.0  # a rebalancing loop around the ring: feasible but wasteful
    bad[-ring4.m + 4:] -= 1.0
    from pmm.flowopt.steady import LpCertificate
    assert not check_lp_certificate(ring4, demand, obj, LpCertificate(bad, sol.certificate.dual)).feasible


def test_flow_text_round_trip(ring4):
    demand = np.zeros((4, 4))
    demand[1, 3] = 1.5
    flow = solve_mp_routing(ring4, demand).flow
    again = parse_steady_flow(format_steady_flow(flow), ring4.m)
    assert again.rebalancing == pytest.approx(flow.rebalancing)
    for k, v in flow.passenger.items():
        assert again.passenger[k] == pytest.approx(v)


@pytest.mark.parametrize("seed", range(10))
def test_steady_objective_matches_oracle(seed):
    rng = random.Random(seed)
    n = rng.randint(2, 6)
    net = random_network(rng, n, rng.randint(0, 2 * n))
    demand = random_demand(rng, n, rng.randint(1, 5))
    obj = MpObjective(fare=3.0, cost_per_length=1.5)
    sol = solve_mp_routing(net, demand, obj)
    assert check_steady_feasibility(sol.flow, net, demand)
    expected = 3.0 * demand.sum() - steady_min_cost(net, demand, 1.5)
    assert sol.objective == pytest.approx(expected, abs=1e-6)


# -- time varying ----------------------------------------------------------

def test_timevarying_single_trip_by_hand():
    net = parse_network(TWO_NODE)
    demand = np.zeros((2, 2, 3))
    demand[0, 1, 0] = 1
    flow, value = solve_timevarying_routing(net, demand, np.array([1.0, 0.0]), MpObjective(fare=5.0))
    # the vehicle carries the rider over edge 0 at t=0 and arrives at t=1
    assert flow.passenger[(0, 1)][0] == pytest.approx([1.0, 0.0])
    assert value == pytest.approx(5.0 - 1.0)
    assert check_timevarying_feasibility(flow, net, demand, [1.0, 0.0]).feasible


def test_timevarying_too_late_is_not_paid():
    net = parse_network("vertices 2\nedge 0 1 affine 3\nedge 1 0 affine 3\n")
    demand = np.zeros((2, 2, 3))
    demand[0, 1, 1] = 1
    _, value = solve_timevarying_routing(net, demand, np.array([1.0, 0.0]), MpObjective(fare=10.0))
    assert value == pytest.approx(0.0)  # entering at t=1 arrives at t=4 > T


def test_timevarying_vehicle_must_come_from_elsewhere():
    net = parse_network(TWO_NODE)
    demand = np.zeros((2, 2, 4))
    demand[0, 1, 0] = 1
    flow, value = solve_timevarying_routing(net, demand, np.array([0.0, 1.0]), MpObjective(fare=5.0))
    # drive empty 1 -> 0 during step 0, pick the rider up at step 1
    assert value == pytest.approx(5.0 - 2.0)
    assert flow.rebalancing[0, 1] == pytest.approx(1.0)


def test_timevarying_feasibility_residuals():
    net = parse_network(TWO_NODE)
    T = 2
    demand = np.zeros((2, 2, T))
    flow = TimeVaryingFlow({}, np.zeros((T, 2)), np.zeros((T, 2)), np.array([1.0, 0.0]))
    rep = check_timevarying_feasibility(flow, net, demand, [1.0, 0.0])
    assert not rep.feasible and rep.residuals["initial"] == pytest.approx(1.0)
    flow.idle[:, 0] = 1.0
    assert check_timevarying_feasibility(flow, net, demand, [1.0, 0.0]).feasible
    # riding before the request exists breaks the cumulative bound
    demand[0, 1, 1] = 1
    x = np.zeros((T, 2))
    x[0, 0] = 1.0
    early = TimeVaryingFlow({(0, 1): x}, np.zeros((T, 2)), np.array([[0.0, 0.0], [0.0, 1.0]]),
                            np.array([1.0, 0.0]))
    rep = check_timevarying_feasibility(early, net, demand, [1.0, 0.0])
    assert rep.residuals["source_cumulative"] == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(8))
def test_timevarying_objective_matches_oracle(seed):
    rng = random.Random(100 + seed)
    n = rng.randint(2, 5)
    T = rng.randint(2, 8)
    net = random_network(rng, n, rng.randint(0, n), max_time=2)
    demand = random_demand(rng, n, rng.randint(1, 4), T)
    y = np.array([rng.randint(0, 3) for _ in range(n)], dtype=float)
    obj = MpObjective(fare=rng.uniform(2.0, 8.0), cost_per_length=1.0)
    flow, value = solve_timevarying_routing(net, demand, y, obj)
    assert check_timevarying_feasibility(flow, net, demand, y).feasible
    assert value == pytest.approx(timevarying_optimum(net, demand, y, obj.fare), abs=1e-6)


# -- social optimum and tolls ---------------------------------------------

def test_pigou_optimum_and_tolls():
    net = pigou()
    demand = np.array([[0.0, 1.0], [0.0, 0.0]])
    so = solve_social_optimum_tt(net, demand)
    assert so.x[1] == pytest.approx(0.5, abs=1e-4)
    assert so.x[0] == pytest.approx(0.5, abs=1e-4)
    tolls = compute_tolls(net, so.x)
    assert tolls[:2] == pytest.approx([0.0, 0.5], abs=1e-4)
    c0, c1 = path_costs(net, so.x, [(0,), (1,)], tolls)
    assert abs(c0 - c1) <= 1e-4
    assert check_kkt(net, demand, so.certificate.flows, so.certificate.potentials).feasible


@pytest.mark.parametrize("seed", range(6))
def test_social_optimum_matches_convex_oracle(seed):
    rng = random.Random(200 + seed)
    n = rng.randint(3, 6)
    net = random_network(rng, n, n, lengths=False, slopes=True)
    demand = random_demand(rng, n, 3).astype(float)
    so = solve_social_optimum_tt(net, demand)
    assert so.relative_gap <= 1e-9
    assert so.objective == pytest.approx(social_optimum_value(net, demand), rel=1e-6)


def test_social_optimum_with_bpr_delays():
    net = Network(2, (Edge(0, 0, 1, DelayFn.bpr(1.0, 0.15, 1.0)), Edge(1, 0, 1, DelayFn.bpr(2.0, 0.15, 2.0)),
                      Edge(2, 1, 0, DelayFn.affine(1.0))), 1.0, 10)
    demand = np.array([[0.0, 3.0], [0.0, 0.0]])
    so = solve_social_optimum_tt(net, demand)
    assert so.objective == pytest.approx(social_optimum_value(net, demand), rel=1e-6)
    mc = net.marginal_costs(so.x)
    assert mc[0] == pytest.approx(mc[1], rel=1e-6)


def test_kkt_rejects_flow_on_costlier_path():
    net = pigou()
    demand = np.array([[0.0, 1.0], [0.0, 0.0]])
    flows = {(0, 1): np.array([0.45, 0.55, 0.0])}
    assert not check_kkt(net, demand, flows, shortest_potentials(net, flows)).feasible
    assert not check_kkt(net, demand, {}, {}).feasible


def test_kkt_certificate_serialization():
    net = pigou()
    so = solve_social_optimum_tt(net, np.array([[0.0, 1.0], [0.0, 0.0]]))
    from pmm.flowopt import KktCertificate
    again = KktCertificate.from_dict(so.certificate.to_dict())
    for k in so.certificate.flows:
        assert np.array_equal(again.flows[k], so.certificate.flows[k])


def perturbed_flows(net, demand, so, fraction=0.05):
    """Shift ``fraction`` of one pair's demand onto a simple path with strictly higher marginal cost."""
    mc = net.marginal_costs(so.x)
    for (i, j), xe in sorted(so.certificate.flows.items()):
        best = min(sum(mc[e] for e in p) for p in simple_paths(net, i, j))
        worse = [p for p in simple_paths(net, i, j) if sum(mc[e] for e in p) > best + 1e-3]
        if not worse:
            continue
        used = max(so.paths[(i, j)], key=lambda pf: pf[1])[0]
        shift = fraction * demand[i, j]
        flows = {k: v.copy() for k, v in so.certificate.flows.items()}
        for e in used:
            flows[(i, j)][e] -= shift
        for e in worse[0]:
            flows[(i, j)][e] += shift
        return flows
    return None


@pytest.mark.parametrize("seed", range(5))
def test_kkt_accepts_solver_and_rejects_perturbation(seed):
    rng = random.Random(300 + seed)
    n = rng.randint(3, 5)
    net = random_network(rng, n, n, lengths=False, slopes=True, two_way=True)
    demand = random_demand(rng, n, 2).astype(float)
    so = solve_social_optimum_tt(net, demand)
    cert = so.certificate
    assert check_kkt(net, demand, cert.flows, cert.potentials).feasible
    flows = perturbed_flows(net, demand, so)
    assert flows is not None
    assert not check_kkt(net, demand, flows, shortest_potentials(net, flows)).feasible


# -- projects --------------------------------------------------------------

def test_project_parsing_and_application(ring4):
    p = parse_project("bridge", "add_edge 0 2 affine 1 length=0.5\nset_delay 1 affine 2 0\n"
                                "add_train_edge 2 0 1.5\n")
    g = p.apply(ring4)
    assert g.m == ring4.m + 2
    assert g.edges[8].length == 0.5 and g.edges[1].delay.a == 2.0
    assert g.edges[9].delay == DelayFn.affine(1.5, 0.0)
    assert parse_project("bridge", p.to_text()) == p
    with pytest.raises(ValueError, match="line 1"):
        parse_project("x", "teleport 0 1")
    with pytest.raises(ValueError):
        Project("x", (SetDelay(99, DelayFn.affine(1.0)),)).apply(ring4)


def test_sop_tie_goes_to_first(ring4):
    demand = np.zeros((4, 4))
    demand[0, 2] = 1
    projects = [Project("a"), Project("b")]
    res = solve_sop(ring4, projects, demand)
    assert res.winner == 0 and res.utilities[0] == res.utilities[1]


def test_sop_shortcut_wins_and_verifies(ring4):
    demand = np.zeros((4, 4))
    demand[0, 2] = 2
    shortcut = Project("shortcut", (AddEdge(0, 2, DelayFn.affine(0.5), 0.5),))
    projects = [Project("none"), shortcut, Project("train", (AddTrainEdge(0, 2, 3.0, 5.0),))]
    res = solve_sop(ring4, projects, demand)
    assert res.winner == 1
    assert verify_sop(ring4, projects, demand, res.certificates) == (res.winner, res.utilities)
    bad = list(res.certificates)
    bad[1] = None  # claiming a feasible project is infeasible must not verify
    assert verify_sop(ring4, projects, demand, bad) is None


def test_sop_infeasible_project():
    net = parse_network("vertices 3\nedge 0 1 affine 1\nedge 1 0 affine 1\nedge 1 2 affine 1\n"
                        "edge 2 1 affine 1\n")
    demand = np.zeros((3, 3))
    demand[0, 2] = 1
    cut = Project("cut", (SetDelay(0, DelayFn.affine(1.0)),))
    res = solve_sop(net, [cut], demand)
    assert res.infeasible == [] and math.isfinite(res.utilities[0])
    island = parse_network("vertices 3\nedge 0 1 affine 1\nedge 1 0 affine 1\n")
    res = solve_sop(island, [Project("none"), Project("link", (AddEdge(1, 2, DelayFn.affine(1.0)),
                                                               AddEdge(2, 1, DelayFn.affine(1.0))))], demand)
    assert res.infeasible == [0] and res.winner == 1
    assert verify_sop(island, [Project("none"), Project("link", (AddEdge(1, 2, DelayFn.affine(1.0)),
                                                                 AddEdge(2, 1, DelayFn.affine(1.0))))],
                      demand, res.certificates) is not None
