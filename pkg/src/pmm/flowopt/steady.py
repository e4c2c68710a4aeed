"""Steady-state routing: passenger flows per origin-destination pair plus one
rebalancing flow of empty vehicles.

Two constraint families:

* vehicle conservation -- at every node, total outflow equals total inflow;
* commodity conservation -- for each pair ``(i, j)`` the passenger flow leaves
  ``i`` and reaches ``j`` at rate ``demand[i, j]`` and is conserved elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.sparse import coo_matrix, csr_matrix

from ..netmodel import Network

Pair = tuple[int, int]

FEAS_TOL = 1e-6


class Infeasible(Exception):
    """The routing problem has no feasible flow."""


@dataclass
class SteadyFlow:
    passenger: dict[Pair, np.ndarray]
    rebalancing: np.ndarray

    def total(self) -> np.ndarray:
        x = np.array(self.rebalancing, dtype=float)
        for v in self.passenger.values():
            x = x + v
        return x


@dataclass
class ResidualReport:
    residuals: dict[str, float]
    tol: float
    worst: dict[str, object] = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all(v <= self.tol for v in self.residuals.values())

    def __bool__(self) -> bool:
        return self.feasible


def _commodities(demand: np.ndarray) -> list[Pair]:
    n = demand.shape[0]
    return [(i, j) for i in range(n) for j in range(n) if i != j and demand[i, j] > 0]


def check_steady_feasibility(flow: SteadyFlow, network: Network, demand, tol: float = FEAS_TOL) -> ResidualReport:
    demand = np.asarray(demand, dtype=float)
    n, m = network.n, network.m
    if demand.shape != (n, n):
        raise ValueError(f"demand must be {n}x{n}, got {demand.shape}")
    if np.shape(flow.rebalancing) != (m,):
        raise ValueError(f"rebalancing flow must have {m} entries")
    for k, v in flow.passenger.items():
        if np.shape(v) != (m,):
            raise ValueError(f"passenger flow {k} must have {m} entries")
    inc = network.incidence
    worst: dict[str, object] = {}

    net_total = inc @ flow.total()
    u = int(np.argmax(np.abs(net_total))) if n else 0
    conservation = float(np.abs(net_total).max(initial=0.0))
    worst["conservation"] = u

    commodity = 0.0
    pairs = set(flow.passenger) | set(_commodities(demand))
    for (i, j) in sorted(pairs):
        x = flow.passenger.get((i, j), np.zeros(m))
        b = np.zeros(n)
        b[i] += demand[i, j]
        b[j] -= demand[i, j]
        r = np.abs(inc @ x - b)
        if r.size and r.max() > commodity:
            commodity = float(r.max())
            worst["commodity"] = ((i, j), int(np.argmax(r)))

    neg = [-float(np.min(flow.rebalancing, initial=0.0))]
    neg += [-float(np.min(v, initial=0.0)) for v in flow.passenger.values()]
    return ResidualReport(
        {"conservation": conservation, "commodity": commodity,
         "nonnegativity": max(0.0, *neg)},
        tol, worst)


# --------------------------------------------------------------------------
# MP routing as a linear program


@dataclass(frozen=True)
class MpObjective:
    """Fare revenue minus operating cost.

    Every requested unit must be served, so revenue is a constant
    ``fare * sum(demand)`` and the optimizer minimizes
    ``cost_per_length * sum_e length_e * x_e`` over total vehicle flow.
    """

    fare: float = 1.0
    cost_per_length: float = 1.0

    def edge_costs(self, network: Network) -> np.ndarray:
        return self.cost_per_length * network.lengths()

    def value(self, network: Network, flow: SteadyFlow, demand) -> float:
        revenue = self.fare * float(np.sum(demand))
        return revenue - float(self.edge_costs(network) @ flow.total())


@dataclass
class RouteLP:
    """``min c @ v  s.t.  A v = b, v >= 0`` with v = [x_p per pair..., x_r]."""

    pairs: list[Pair]
    c: np.ndarray
    A: csr_matrix
    b: np.ndarray
    m: int

    def unpack(self, v: np.ndarray) -> SteadyFlow:
        m = self.m
        passenger = {k: np.array(v[s * m:(s + 1) * m]) for s, k in enumerate(self.pairs)}
        return SteadyFlow(passenger, np.array(v[len(self.pairs) * m:]))

    def pack(self, flow: SteadyFlow) -> np.ndarray:
        parts = [flow.passenger.get(k, np.zeros(self.m)) for k in self.pairs]
        return np.concatenate(parts + [flow.rebalancing])


def build_route_lp(network: Network, demand, objective: MpObjective) -> RouteLP:
    demand = np.asarray(demand, dtype=float)
    n, m = network.n, network.m
    pairs = _commodities(demand)
    K = len(pairs)
    inc = coo_matrix(network.incidence)
    blocks_r, blocks_c, blocks_v = [], [], []
    b = []
    # commodity conservation rows: K blocks of n rows
    for s, (i, j) in enumerate(pairs):
        blocks_r.append(inc.row + s * n)
        blocks_c.append(inc.col + s * m)
        blocks_v.append(inc.data)
        rhs = np.zeros(n)
        rhs[i] += demand[i, j]
        rhs[j] -= demand[i, j]
        b.append(rhs)
    # vehicle conservation rows: incidence applied to every variable block
    for s in range(K + 1):
        blocks_r.append(inc.row + K * n)
        blocks_c.append(inc.col + s * m)
        blocks_v.append(inc.data)
    b.append(np.zeros(n))
    A = coo_matrix((np.concatenate(blocks_v), (np.concatenate(blocks_r), np.concatenate(blocks_c))),
                   shape=((K + 1) * n, (K + 1) * m)).tocsr()
    c = np.tile(objective.edge_costs(network), K + 1)
    return RouteLP(pairs, c, A, np.concatenate(b), m)


@dataclass
class LpCertificate:
    """Primal-dual pair for the routing LP."""

    primal: np.ndarray
    dual: np.ndarray


@dataclass
class RouteSolution:
    flow: SteadyFlow
    objective: float
    certificate: LpCertificate


def solve_mp_routing(network: Network, demand, objective: MpObjective | None = None) -> RouteSolution:
    objective = objective or MpObjective()
    demand = np.asarray(demand, dtype=float)
    lp = build_route_lp(network, demand, objective)
    if not lp.pairs:
        zero = SteadyFlow({}, np.zeros(network.m))
        return RouteSolution(zero, objective.value(network, zero, demand),
                             LpCertificate(np.zeros(network.m), np.zeros(lp.A.shape[0])))
    res = linprog(lp.c, A_eq=lp.A, b_eq=lp.b, bounds=(0, None), method="highs")
    if res.status == 2:
        raise Infeasible("demand cannot be served on this network")
    if res.status != 0:
        raise RuntimeError(f"routing LP failed: {res.message}")
    v = np.maximum(res.x, 0.0)
    flow = lp.unpack(v)
    return RouteSolution(flow, objective.value(network, flow, demand),
                         LpCertificate(v, np.asarray(res.eqlin.marginals)))


def check_lp_certificate(network: Network, demand, objective: MpObjective, cert: LpCertificate,
                         tol: float = FEAS_TOL) -> ResidualReport:
    """Optimality of a routing LP solution via primal/dual feasibility and zero gap."""
    lp = build_route_lp(network, demand, objective)
    v, y = np.asarray(cert.primal, float), np.asarray(cert.dual, float)
    if v.shape != lp.c.shape or y.shape != lp.b.shape:
        return ResidualReport({"shape": np.inf}, tol)
    primal = float(np.abs(lp.A @ v - lp.b).max(initial=0.0))
    nonneg = max(0.0, -float(v.min(initial=0.0)))
    reduced = lp.c - lp.A.T @ y
    dual = max(0.0, -float(reduced.min(initial=0.0)))
    scale = max(1.0, abs(float(lp.c @ v)))
    gap = abs(float(lp.c @ v - lp.b @ y)) / scale
    return ResidualReport({"primal": primal, "nonnegativity": nonneg, "dual": dual, "gap": gap}, tol)


# --------------------------------------------------------------------------
# Tabular text format


def format_steady_flow(flow: SteadyFlow, precision: int = 9) -> str:
    """One line per nonzero entry::

        passenger <i> <j> <edge> <value>
        rebalance <edge> <value>
    """
    lines = []
    for (i, j) in sorted(flow.passenger):
        for e, v in enumerate(flow.passenger[(i, j)]):
            if abs(v) > 10 ** -precision:
                lines.append(f"passenger {i} {j} {e} {v:.{precision}f}")
    for e, v in enumerate(flow.rebalancing):
        if abs(v) > 10 ** -precision:
            lines.append(f"rebalance {e} {v:.{precision}f}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_steady_flow(text: str, m: int) -> SteadyFlow:
    passenger: dict[Pair, np.ndarray] = {}
    rebalancing = np.zeros(m)
    for line in text.splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "passenger":
            i, j, e = map(int, tok[1:4])
            passenger.setdefault((i, j), np.zeros(m))[e] = float(tok[4])
        elif tok[0] == "rebalance":
            rebalancing[int(tok[1])] = float(tok[2])
        else:
            raise ValueError(f"unknown flow record {tok[0]!r}")
    return SteadyFlow(passenger, rebalancing)
