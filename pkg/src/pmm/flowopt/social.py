"""System-optimal traffic assignment, marginal-cost tolls and KKT checks.

The social optimum minimizes total travel time ``sum_e x_e f_e(x_e)`` over
passenger flows that route each origin-destination demand (no rebalancing).
It is solved by a path-based Frank-Wolfe scheme: every iteration linearizes
the objective, asks a shortest-path oracle for the best path of each pair
under marginal costs, and moves flow onto it from costlier used paths with an
exact line search (pairwise steps). The relative gap

    (sum_e x_e m_e - sum_od d_od * shortest_od) / sum_e x_e m_e,

with ``m_e = f_e + x_e f_e'``, certifies optimality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..netmodel import Network, shortest_paths
from .steady import Infeasible, Pair, ResidualReport

KKT_TOL = 1e-6


@dataclass
class KktCertificate:
    """Per-pair edge flows and per-pair node potentials."""

    flows: dict[Pair, np.ndarray]
    potentials: dict[Pair, np.ndarray]
    tol: float = KKT_TOL

    def total(self, m: int) -> np.ndarray:
        x = np.zeros(m)
        for v in self.flows.values():
            x = x + v
        return x

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "flows": {f"{i},{j}": [float(v).hex() for v in x] for (i, j), x in sorted(self.flows.items())},
            "potentials": {f"{i},{j}": [float(v).hex() for v in p]
                           for (i, j), p in sorted(self.potentials.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KktCertificate":
        def pairs(block):
            out = {}
            for key, vals in block.items():
                i, j = map(int, key.split(","))
                out[(i, j)] = np.array([float.fromhex(v) for v in vals])
            return out
        return cls(pairs(d["flows"]), pairs(d["potentials"]), float(d["tol"]))


@dataclass
class SocialOptimum:
    x: np.ndarray  # aggregate edge flow
    paths: dict[Pair, list[tuple[tuple[int, ...], float]]]
    certificate: KktCertificate
    objective: float
    relative_gap: float
    iterations: int = 0
    history: list[float] = field(default_factory=list, repr=False)


def _path_cost(mc: np.ndarray, path: tuple[int, ...]) -> float:
    return float(sum(mc[e] for e in path))


def _pairwise_step(network: Network, x: np.ndarray, to_path, from_path, available: float) -> float:
    """Flow to move from ``from_path`` onto ``to_path`` minimizing total travel time."""
    gain = [e for e in to_path if e not in from_path]
    loss = [e for e in from_path if e not in to_path]
    if not gain and not loss:
        return 0.0
    edges = network.edges

    def slope(d):
        return (sum(edges[e].delay.marginal(x[e] + d) for e in gain)
                - sum(edges[e].delay.marginal(x[e] - d) for e in loss))

    def curvature(d):
        def m2(e, xe):
            dl = edges[e].delay
            return 2.0 * dl.derivative(xe) + xe * dl.second_derivative(xe)
        return sum(m2(e, x[e] + d) for e in gain) + sum(m2(e, x[e] - d) for e in loss)

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(available) <= 0.0:
        return available
    lo, hi = 0.0, available
    d = 0.5 * available
    for _ in range(100):
        s = slope(d)
        if s > 0:
            hi = d
        else:
            lo = d
        h = curvature(d)
        nd = d - s / h if h > 0 else 0.5 * (lo + hi)
        if not lo < nd < hi:
            nd = 0.5 * (lo + hi)
        if abs(nd - d) <= 1e-15 * max(1.0, available):
            d = nd
            break
        d = nd
    return d


def _potentials(network: Network, mc: np.ndarray, origins) -> dict[int, tuple[np.ndarray, dict]]:
    out = {}
    for i in origins:
        dist, paths = shortest_paths(network, mc, i)
        pot = np.array([dist.get(u, np.inf) for u in range(network.n)])
        out[i] = (pot, paths)
    return out


def solve_social_optimum_tt(network: Network, demand, tol: float = 1e-12,
                            max_iter: int = 5000) -> SocialOptimum:
    demand = np.asarray(demand, dtype=float)
    n, m = network.n, network.m
    if demand.shape != (n, n):
        raise ValueError(f"demand must be {n}x{n}")
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j and demand[i, j] > 0]
    origins = sorted({i for i, _ in pairs})
    x = np.zeros(m)
    path_flows: dict[Pair, dict[tuple[int, ...], float]] = {}
    trees = _potentials(network, network.marginal_costs(x), origins)
    for (i, j) in pairs:
        if j not in trees[i][1]:
            raise Infeasible(f"no path from {i} to {j}")
        p = trees[i][1][j]
        path_flows[(i, j)] = {p: demand[i, j]}
        for e in p:
            x[e] += demand[i, j]

    def gap_of(x, trees):
        mc = network.marginal_costs(x)
        upper = float(x @ mc)
        lower = sum(demand[i, j] * trees[i][0][j] for i, j in pairs)
        return (upper - lower) / upper if upper > 0 else 0.0

    history = []
    it = 0
    gap = 0.0
    for it in range(1, max_iter + 1):
        trees = _potentials(network, network.marginal_costs(x), origins)
        gap = gap_of(x, trees)
        history.append(gap)
        if gap <= tol:
            break
        for (i, j) in pairs:
            _, paths = _potentials(network, network.marginal_costs(x), [i])[i]
            best = paths[j]
            flows = path_flows[(i, j)]
            flows.setdefault(best, 0.0)
            mc = network.marginal_costs(x)
            for p in sorted(flows, key=lambda q: -_path_cost(mc, q)):
                if p == best or flows[p] <= 0.0:
                    continue
                d = _pairwise_step(network, x, best, p, flows[p])
                if d <= 0.0:
                    continue
                flows[p] -= d
                flows[best] += d
                for e in p:
                    x[e] -= d
                for e in best:
                    x[e] += d
            for p in [q for q, f in flows.items() if f <= 1e-15 * demand[i, j] and q != best]:
                del flows[p]
        x = np.maximum(x, 0.0)

    mc = network.marginal_costs(x)
    trees = _potentials(network, mc, origins)
    per_pair = {}
    pots = {}
    for (i, j) in pairs:
        xe = np.zeros(m)
        for p, f in path_flows[(i, j)].items():
            for e in p:
                xe[e] += f
        per_pair[(i, j)] = xe
        pot = trees[i][0].copy()
        pot[~np.isfinite(pot)] = 0.0
        pots[(i, j)] = pot
    paths_out = {k: sorted(((p, f) for p, f in v.items() if f > 0), key=lambda t: t[0])
                 for k, v in path_flows.items()}
    return SocialOptimum(x, paths_out, KktCertificate(per_pair, pots), network.total_travel_time(x),
                         gap, it, history)


def compute_tolls(network: Network, x) -> np.ndarray:
    """Marginal-cost toll ``x_e * f_e'(x_e)`` per edge."""
    x = np.asarray(x, dtype=float)
    return x * network.derivatives(x)


def shortest_potentials(network: Network, flows: dict[Pair, np.ndarray]) -> dict[Pair, np.ndarray]:
    """Best-case duals for a candidate flow: marginal-cost distances from each origin."""
    x = np.zeros(network.m)
    for v in flows.values():
        x = x + v
    mc = network.marginal_costs(x)
    out = {}
    for (i, j) in flows:
        dist, _ = shortest_paths(network, mc, i)
        out[(i, j)] = np.array([dist.get(u, 0.0) for u in range(network.n)])
    return out


def check_kkt(network: Network, demand, flows: dict[Pair, np.ndarray],
              potentials: dict[Pair, np.ndarray], tol: float = KKT_TOL) -> ResidualReport:
    """First-order optimality of per-pair flows for minimum total travel time.

    With potentials ``pi`` per pair, the reduced cost of edge ``(u, v)`` is
    ``m_e + pi_u - pi_v``. Checks feasibility, nonnegative reduced costs and
    complementary slackness ``x_e * reduced_e = 0``.
    """
    demand = np.asarray(demand, dtype=float)
    n, m = network.n, network.m
    pairs = {(i, j) for i in range(n) for j in range(n) if i != j and demand[i, j] > 0}
    res = {"feasibility": 0.0, "nonnegativity": 0.0, "dual": 0.0, "complementarity": 0.0}
    if set(flows) != pairs or set(potentials) != pairs:
        res["feasibility"] = np.inf
        return ResidualReport(res, tol)
    x = np.zeros(m)
    for v in flows.values():
        v = np.asarray(v, dtype=float)
        if v.shape != (m,) or not np.all(np.isfinite(v)):
            res["feasibility"] = np.inf
            return ResidualReport(res, tol)
        x = x + v
    mc = network.marginal_costs(np.maximum(x, 0.0))
    src = np.array([e.src for e in network.edges], dtype=int)
    dst = np.array([e.dst for e in network.edges], dtype=int)
    inc = network.incidence
    for (i, j) in pairs:
        xe = np.asarray(flows[(i, j)], dtype=float)
        pi = np.asarray(potentials[(i, j)], dtype=float)
        if pi.shape != (n,) or not np.all(np.isfinite(pi)):
            res["dual"] = np.inf
            continue
        b = np.zeros(n)
        b[i], b[j] = demand[i, j], -demand[i, j]
        res["feasibility"] = max(res["feasibility"], float(np.abs(inc @ xe - b).max()))
        res["nonnegativity"] = max(res["nonnegativity"], -float(xe.min(initial=0.0)))
        reduced = mc + pi[src] - pi[dst]
        res["dual"] = max(res["dual"], -float(reduced.min(initial=0.0)))
        res["complementarity"] = max(res["complementarity"], float(np.abs(xe * reduced).max(initial=0.0)))
    return ResidualReport(res, tol)


def path_costs(network: Network, x, paths, tolls=None) -> list[float]:
    """Generalized cost (travel time plus toll) of each path at flow ``x``."""
    t = network.travel_times(x)
    if tolls is not None:
        t = t + np.asarray(tolls)
    return [float(sum(t[e] for e in p)) for p in paths]
