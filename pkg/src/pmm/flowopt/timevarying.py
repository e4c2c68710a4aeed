"""Time-expanded routing over decision steps ``t = 0..T-1``.

A vehicle entering edge ``e`` at step ``t`` leaves it at ``t + tau_e`` where
``tau_e`` is the free-flow time in whole steps. Every node also has an implicit
unit-length idle arc so vehicles can wait in place; idle arcs carry only empty
vehicles.

Constraint families checked by :func:`check_timevarying_feasibility`:

``vehicle_conservation``
    vehicles arriving at ``(u, t)`` (including idlers from ``t-1``) all depart
    at ``t``, for ``t >= 1``;
``initial``
    at ``t = 0`` the vehicles departing ``u`` (or idling) number ``y[u]``;
``commodity_conservation``
    passenger flow of pair ``(i, j)`` is conserved at every ``u`` not in
    ``{i, j}``;
``source_cumulative``
    net passenger departures from ``i`` up to ``t`` never exceed the requests
    made up to ``t``;
``destination``
    no passenger flow of ``(i, j)`` leaves ``j``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix

from ..netmodel import Network
from .steady import FEAS_TOL, Infeasible, MpObjective, Pair, ResidualReport


@dataclass
class TimeVaryingFlow:
    passenger: dict[Pair, np.ndarray]  # (T, m) per pair
    rebalancing: np.ndarray  # (T, m)
    idle: np.ndarray  # (T, n)
    initial: np.ndarray  # (n,)

    def vehicles(self) -> np.ndarray:
        x = np.array(self.rebalancing, dtype=float)
        for v in self.passenger.values():
            x = x + v
        return x


def _taus(network: Network) -> np.ndarray:
    return np.array([network.steps(e) for e in range(network.m)])


def _arrivals(network: Network, taus: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(T, n) array: flow on real edges arriving at each node at each step."""
    T = x.shape[0]
    arr = np.zeros((T, network.n))
    for e in network.edges:
        tau = taus[e.id]
        if tau < T:
            arr[tau:, e.dst] += x[:T - tau, e.id]
    return arr


def _departures(network: Network, x: np.ndarray) -> np.ndarray:
    return x @ np.maximum(network.incidence, 0).T


def check_timevarying_feasibility(flow: TimeVaryingFlow, network: Network, demand, y,
                                  tol: float = FEAS_TOL) -> ResidualReport:
    demand = np.asarray(demand, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = network.n, network.m
    if demand.ndim != 3 or demand.shape[:2] != (n, n):
        raise ValueError(f"demand must be {n}x{n}xT, got {demand.shape}")
    T = demand.shape[2]
    if flow.rebalancing.shape != (T, m) or flow.idle.shape != (T, n) or y.shape != (n,):
        raise ValueError("flow dimensions do not match the network and horizon")
    for k, v in flow.passenger.items():
        if v.shape != (T, m):
            raise ValueError(f"passenger flow {k} must be {T}x{m}")
    taus = _taus(network)
    veh = flow.vehicles()
    dep = _departures(network, veh) + flow.idle
    arr = _arrivals(network, taus, veh)
    arr[1:] += flow.idle[:-1]
    res = {}
    res["initial"] = float(np.abs(dep[0] - y).max(initial=0.0))
    res["vehicle_conservation"] = float(np.abs(dep[1:] - arr[1:]).max(initial=0.0))
    res["initial_declared"] = float(np.abs(np.asarray(flow.initial) - y).max(initial=0.0))

    pairs = set(flow.passenger)
    pairs |= {(i, j) for i in range(n) for j in range(n) if i != j and demand[i, j].sum() > 0}
    conservation = source = dest = 0.0
    for (i, j) in pairs:
        x = flow.passenger.get((i, j), np.zeros((T, m)))
        d = _departures(network, x)
        a = _arrivals(network, taus, x)
        others = [u for u in range(n) if u not in (i, j)]
        if others:
            conservation = max(conservation, float(np.abs(d[:, others] - a[:, others]).max()))
        net = np.cumsum(d[:, i] - a[:, i])
        source = max(source, float(np.max(net - np.cumsum(demand[i, j]), initial=0.0)))
        out_j = list(network.out_edges[j])
        if out_j:
            dest = max(dest, float(np.abs(x[:, out_j]).max()))
    res["commodity_conservation"] = conservation
    res["source_cumulative"] = source
    res["destination"] = dest
    neg = [flow.rebalancing.min(initial=0.0), flow.idle.min(initial=0.0)]
    neg += [v.min(initial=0.0) for v in flow.passenger.values()]
    res["nonnegativity"] = max(0.0, -float(min(neg)))
    return ResidualReport(res, tol)


class _Index:
    """Flat variable layout: passenger blocks, rebalancing, idle."""

    def __init__(self, K: int, T: int, m: int, n: int):
        self.K, self.T, self.m, self.n = K, T, m, n
        self.size = (K + 1) * T * m + T * n

    def x(self, k: int, t: int, e: int) -> int:
        return (k * self.T + t) * self.m + e

    def r(self, t: int, e: int) -> int:
        return self.x(self.K, t, e)

    def idle(self, t: int, u: int) -> int:
        return (self.K + 1) * self.T * self.m + t * self.n + u


def delivered(network: Network, flow: TimeVaryingFlow) -> float:
    """Passenger units reaching their destination by the end of the horizon."""
    total = 0.0
    T = flow.rebalancing.shape[0]
    for (i, j), x in flow.passenger.items():
        for e in network.in_edges[j]:
            tau = network.steps(e)
            if tau <= T:
                total += float(x[:T - tau + 1, e].sum())
    return total


def timevarying_objective(network: Network, flow: TimeVaryingFlow, objective: MpObjective) -> float:
    cost = float((flow.vehicles() @ objective.edge_costs(network)).sum())
    return objective.fare * delivered(network, flow) - cost


def solve_timevarying_routing(network: Network, demand, y,
                              objective: MpObjective | None = None) -> tuple[TimeVaryingFlow, float]:
    """Maximize fare on delivered passengers minus operating cost."""
    objective = objective or MpObjective()
    demand = np.asarray(demand, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = network.n, network.m
    T = demand.shape[2]
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and demand[i, j].sum() > 0]
    K = len(pairs)
    idx = _Index(K, T, m, n)
    taus = _taus(network)
    costs = objective.edge_costs(network)

    c = np.zeros(idx.size)
    for k in range(K + 1):
        for t in range(T):
            for e in range(m):
                c[idx.x(k, t, e)] = costs[e]
    for k, (i, j) in enumerate(pairs):
        for e in network.in_edges[j]:
            for t in range(T):
                if t + taus[e] <= T:
                    c[idx.x(k, t, e)] -= objective.fare

    eq_rows, eq_cols, eq_vals, eq_b = [], [], [], []
    ub_rows, ub_cols, ub_vals, ub_b = [], [], [], []

    def add(rows, cols, vals, row, entries):
        for col, val in entries:
            rows.append(row)
            cols.append(col)
            vals.append(val)

    def vehicle_out(u, t):
        out = [(idx.idle(t, u), 1.0)]
        for e in network.out_edges[u]:
            out += [(idx.x(k, t, e), 1.0) for k in range(K + 1)]
        return out

    def vehicle_in(u, t):
        inc = [(idx.idle(t - 1, u), 1.0)] if t >= 1 else []
        for e in network.in_edges[u]:
            s = t - taus[e]
            if s >= 0:
                inc += [(idx.x(k, s, e), 1.0) for k in range(K + 1)]
        return inc

    row = 0
    for u in range(n):
        add(eq_rows, eq_cols, eq_vals, row, vehicle_out(u, 0))
        eq_b.append(y[u])
        row += 1
        for t in range(1, T):
            add(eq_rows, eq_cols, eq_vals, row,
                vehicle_out(u, t) + [(col, -v) for col, v in vehicle_in(u, t)])
            eq_b.append(0.0)
            row += 1
    for k, (i, j) in enumerate(pairs):
        for t in range(T):
            for u in range(n):
                if u in (i, j):
                    continue
                entries = [(idx.x(k, t, e), 1.0) for e in network.out_edges[u]]
                entries += [(idx.x(k, t - taus[e], e), -1.0) for e in network.in_edges[u] if t - taus[e] >= 0]
                if entries:
                    add(eq_rows, eq_cols, eq_vals, row, entries)
                    eq_b.append(0.0)
                    row += 1
    ub_row = 0
    for k, (i, j) in enumerate(pairs):
        cum = np.cumsum(demand[i, j])
        for t in range(T):
            entries = []
            for s in range(t + 1):
                entries += [(idx.x(k, s, e), 1.0) for e in network.out_edges[i]]
                entries += [(idx.x(k, s - taus[e], e), -1.0) for e in network.in_edges[i] if s - taus[e] >= 0]
            add(ub_rows, ub_cols, ub_vals, ub_row, entries)
            ub_b.append(cum[t])
            ub_row += 1

    bounds = [(0.0, None)] * idx.size
    for k, (i, j) in enumerate(pairs):
        for e in network.out_edges[j]:
            for t in range(T):
                bounds[idx.x(k, t, e)] = (0.0, 0.0)

    A_eq = coo_matrix((eq_vals, (eq_rows, eq_cols)), shape=(row, idx.size)).tocsr()
    A_ub = coo_matrix((ub_vals, (ub_rows, ub_cols)), shape=(ub_row, idx.size)).tocsr() if ub_row else None
    res = linprog(c, A_ub=A_ub, b_ub=ub_b if ub_row else None, A_eq=A_eq, b_eq=eq_b,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible("no feasible time-varying routing for this initial fleet")
    if res.status != 0:
        raise RuntimeError(f"time-varying LP failed: {res.message}")
    v = np.maximum(res.x, 0.0)
    passenger = {pair: np.array([[v[idx.x(k, t, e)] for e in range(m)] for t in range(T)])
                 for k, pair in enumerate(pairs)}
    reb = np.array([[v[idx.r(t, e)] for e in range(m)] for t in range(T)]).reshape(T, m)
    idle = np.array([[v[idx.idle(t, u)] for u in range(n)] for t in range(T)]).reshape(T, n)
    flow = TimeVaryingFlow(passenger, reb, idle, y.copy())
    return flow, timevarying_objective(network, flow, objective)
