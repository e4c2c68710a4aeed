"""Infrastructure projects and single-project selection.

A project is an edit script applied to the base network::

    add_edge <src> <dst> <kind> <params...> [length=<l>]
    set_delay <edge> <kind> <params...>
    add_train_edge <src> <dst> <time> [length=<l>]

Selection picks the project whose MP-optimal routing scores best under the
authority's welfare function; ties go to the lowest index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..netmodel import DelayFn, Edge, Network, parse_edge_line
from .steady import (FEAS_TOL, Infeasible, LpCertificate, MpObjective, RouteLP, SteadyFlow,
                     build_route_lp, check_lp_certificate, solve_mp_routing)


@dataclass(frozen=True)
class AddEdge:
    src: int
    dst: int
    delay: DelayFn
    length: float = 1.0

    def line(self) -> str:
        return f"add_edge {self.src} {self.dst} {self.delay.spec()} length={self.length!r}"


@dataclass(frozen=True)
class SetDelay:
    edge: int
    delay: DelayFn

    def line(self) -> str:
        return f"set_delay {self.edge} {self.delay.spec()}"


@dataclass(frozen=True)
class AddTrainEdge:
    """A congestion-free link: constant travel time regardless of flow."""

    src: int
    dst: int
    time: float
    length: float = 1.0

    def line(self) -> str:
        return f"add_train_edge {self.src} {self.dst} {self.time!r} length={self.length!r}"


Edit = AddEdge | SetDelay | AddTrainEdge


@dataclass(frozen=True)
class Project:
    id: str
    edits: tuple[Edit, ...] = ()

    def apply(self, network: Network) -> Network:
        edges = list(network.edges)
        for ed in self.edits:
            if isinstance(ed, AddEdge):
                edges.append(Edge(len(edges), ed.src, ed.dst, ed.delay, ed.length))
            elif isinstance(ed, AddTrainEdge):
                edges.append(Edge(len(edges), ed.src, ed.dst, DelayFn.affine(ed.time, 0.0), ed.length))
            elif isinstance(ed, SetDelay):
                if not 0 <= ed.edge < len(edges):
                    raise ValueError(f"project {self.id}: no edge {ed.edge} to modify")
                edges[ed.edge] = replace(edges[ed.edge], delay=ed.delay)
            else:
                raise TypeError(f"unknown edit {ed!r}")
        return network.with_edges(edges)

    def to_text(self) -> str:
        return "".join(ed.line() + "\n" for ed in self.edits)


def parse_edit(tokens: Sequence[str]) -> Edit:
    op, *rest = tokens
    if op == "add_edge":
        e = parse_edge_line(rest, 0)
        return AddEdge(e.src, e.dst, e.delay, e.length)
    if op == "set_delay":
        if len(rest) < 3:
            raise ValueError("set_delay needs '<edge> <kind> <params...>'")
        return SetDelay(int(rest[0]), DelayFn.from_tokens(rest[1], rest[2:]))
    if op == "add_train_edge":
        length = 1.0
        if rest and rest[-1].startswith("length="):
            length = float(rest.pop().split("=", 1)[1])
        if len(rest) != 3:
            raise ValueError("add_train_edge needs '<src> <dst> <time>'")
        return AddTrainEdge(int(rest[0]), int(rest[1]), float(rest[2]), length)
    raise ValueError(f"unknown project edit {op!r}")


def parse_project(project_id: str, text: str) -> Project:
    edits = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            edits.append(parse_edit(line.split()))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return Project(project_id, tuple(edits))


# --------------------------------------------------------------------------
# Welfare and selection

Welfare = Callable[[Network, SteadyFlow], float]


def negative_travel_time(network: Network, flow: SteadyFlow) -> float:
    """Default authority welfare: minus total travel time of all vehicles."""
    return -network.total_travel_time(flow.total())


@dataclass
class SopResult:
    winner: int
    utilities: list[float]
    infeasible: list[int]
    certificates: list[LpCertificate | None]


def _argmax(utilities: Sequence[float]) -> int:
    best = 0
    for k, u in enumerate(utilities):
        if u > utilities[best]:
            best = k
    return best


def solve_sop(network: Network, projects: Sequence[Project], demand,
              j_ma: Welfare | None = None, j_mp: MpObjective | None = None) -> SopResult:
    if not projects:
        raise ValueError("need at least one project")
    j_ma = j_ma or negative_travel_time
    j_mp = j_mp or MpObjective()
    utilities, infeasible, certs = [], [], []
    for k, p in enumerate(projects):
        g = p.apply(network)
        try:
            sol = solve_mp_routing(g, demand, j_mp)
        except Infeasible:
            utilities.append(-math.inf)
            infeasible.append(k)
            certs.append(None)
            continue
        utilities.append(float(j_ma(g, sol.flow)))
        certs.append(sol.certificate)
    return SopResult(_argmax(utilities), utilities, infeasible, certs)


def _lp_feasible(lp: RouteLP) -> bool:
    from scipy.optimize import linprog
    res = linprog(np.zeros_like(lp.c), A_eq=lp.A, b_eq=lp.b, bounds=(0, None), method="highs")
    return res.status == 0


def verify_sop(network: Network, projects: Sequence[Project], demand, certificates,
               j_ma: Welfare | None = None, j_mp: MpObjective | None = None,
               tol: float = FEAS_TOL) -> tuple[int, list[float]] | None:
    """Recompute the selection from per-project certificates.

    Feasible projects are checked through their LP primal/dual pair; a project
    reported infeasible is checked with a feasibility-only LP. Returns
    ``(winner, utilities)`` or None when any certificate is invalid.
    """
    j_ma = j_ma or negative_travel_time
    j_mp = j_mp or MpObjective()
    if len(certificates) != len(projects) or not projects:
        return None
    utilities = []
    for p, cert in zip(projects, certificates):
        g = p.apply(network)
        lp = build_route_lp(g, demand, j_mp)
        if cert is None:
            if not lp.pairs or _lp_feasible(lp):
                return None
            utilities.append(-math.inf)
            continue
        if not lp.pairs:
            utilities.append(float(j_ma(g, SteadyFlow({}, np.zeros(g.m)))))
            continue
        if not check_lp_certificate(g, demand, j_mp, cert, tol):
            return None
        utilities.append(float(j_ma(g, lp.unpack(np.maximum(cert.primal, 0.0)))))
    return _argmax(utilities), utilities
