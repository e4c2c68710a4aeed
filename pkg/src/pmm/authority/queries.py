"""Query functions ``g`` the authority may ask of the committed demand.

Every query maps a list of trip records to a JSON-serializable answer ``z``.
Optimization queries (congestion pricing, project selection) are not re-solved
by the verifier: the answer is read off a certificate ``c_w`` supplied by the
provider, after the certificate's optimality conditions are checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, ClassVar, Sequence

import numpy as np

from ..flowopt import (KktCertificate, LpCertificate, MpObjective, Project, check_kkt,
                       compute_tolls, parse_project, solve_social_optimum_tt, solve_sop, verify_sop)
from ..netmodel import Network, TripRecord, demand_matrix, period_counts, trip_emissions, validate_trip

WAGE_TOL = 1e-9


class CannotVerify(Exception):
    """The witness lacks a valid certificate for an optimization query."""


class QueryRejected(Exception):
    """The provider refuses to evaluate a query outside the admissible set."""


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


# --------------------------------------------------------------------------
# Regulation predicates (each evaluates to 0 or 1)


def wage_formula(trip: TripRecord, alpha: float, beta: float) -> float:
    n2, n3 = period_counts(trip)
    return alpha * n2 + beta * n3


def mean_wait_by_region(trips: Sequence[TripRecord], regions: Sequence[int]) -> dict[int, float]:
    sums: dict[int, list[float]] = {}
    for t in trips:
        r = regions[t.pickup_loc]
        s = sums.setdefault(r, [0.0, 0])
        s[0] += t.pickup_time - t.request_time
        s[1] += 1
    return {r: tot / cnt for r, (tot, cnt) in sums.items()}


def edge_traversal_counts(trips: Sequence[TripRecord], m: int) -> np.ndarray:
    """Number of MP traversals (Period 2 or 3) of each edge."""
    out = np.zeros(m)
    for t in trips:
        for e, _ in t.trajectory:
            out[e] += 1
    return out


def traversal_durations(trip: TripRecord) -> list[tuple[int, int]]:
    """``(edge, duration)`` per trajectory element; the last edge ends at drop-off."""
    traj = trip.trajectory
    ends = [t for _, t in traj[1:]] + [trip.dropoff_time]
    return [(e, end - t) for (e, t), end in zip(traj, ends)]


@dataclass(frozen=True)
class WaitTimeEquity:
    kind: ClassVar[str] = "wait_equity"
    regions: tuple[int, ...]
    tau: float

    def holds(self, trips, network, pk_mp) -> bool:
        means = mean_wait_by_region(trips, self.regions)
        if len(means) < 2:
            return True
        return max(means.values()) - min(means.values()) <= self.tau


@dataclass(frozen=True)
class CongestionContributionLimit:
    """MP traversals on each edge, as a share of the background flow there, stay at or below ``limit``."""

    kind: ClassVar[str] = "congestion"
    background: tuple[float, ...]
    limit: float

    def holds(self, trips, network, pk_mp) -> bool:
        counts = edge_traversal_counts(trips, network.m)
        bg = np.asarray(self.background, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            share = np.where(bg > 0, counts / np.where(bg > 0, bg, 1.0), np.where(counts > 0, np.inf, 0.0))
        return bool(np.all(share <= self.limit))


@dataclass(frozen=True)
class SpeedLimit:
    """Each traversal takes at least ``length / limit``; a limit of 0 means unrestricted."""

    kind: ClassVar[str] = "speed_limit"
    limits: tuple[float, ...]

    def holds(self, trips, network, pk_mp) -> bool:
        for t in trips:
            for e, dur in traversal_durations(t):
                lim = self.limits[e]
                if lim > 0 and dur * network.dt < network.edges[e].length / lim - 1e-12:
                    return False
        return True


@dataclass(frozen=True)
class Period2Accuracy:
    """Every match time is backed by a genuine signed match notice for the serving vehicle."""

    kind: ClassVar[str] = "period2_accuracy"

    def holds(self, trips, network, pk_mp) -> bool:
        for t in trips:
            notice = t.match_notice
            if notice is None or pk_mp is None or not notice.verify(pk_mp):
                return False
            if notice.declared() != (t.vehicle.vehicle_id, t.match_time):
                return False
        return True


@dataclass(frozen=True)
class EmissionsLimit:
    kind: ClassVar[str] = "emissions"
    limit: float

    def holds(self, trips, network, pk_mp) -> bool:
        return sum(trip_emissions(t) for t in trips) <= self.limit


RegPredicate = WaitTimeEquity | CongestionContributionLimit | SpeedLimit | Period2Accuracy | EmissionsLimit
PREDICATES = {c.kind: c for c in (WaitTimeEquity, CongestionContributionLimit, SpeedLimit,
                                  Period2Accuracy, EmissionsLimit)}


# --------------------------------------------------------------------------
# Queries


@dataclass(frozen=True)
class TripCount:
    kind: ClassVar[str] = "trip_count"


@dataclass(frozen=True)
class RegulationBundle:
    kind: ClassVar[str] = "regulation"
    predicates: tuple[RegPredicate, ...]


@dataclass(frozen=True)
class Wage:
    kind: ClassVar[str] = "wage"
    alpha: float = 1.0
    beta: float = 2.0


@dataclass(frozen=True)
class WaitEquity:
    kind: ClassVar[str] = "wait_equity"
    regions: tuple[int, ...]
    tau: float


@dataclass(frozen=True)
class CongestionPricing:
    """Marginal-cost tolls for the social optimum of the served OD demand (times ``scale``)."""

    kind: ClassVar[str] = "congestion_pricing"
    scale: float = 1.0
    tol: float = 1e-6


@dataclass(frozen=True)
class SopSelection:
    kind: ClassVar[str] = "sop"
    projects: tuple[Project, ...]
    scale: float = 1.0


@dataclass(frozen=True)
class CongestionContribution:
    kind: ClassVar[str] = "congestion_contribution"
    background: tuple[float, ...]
    limit: float


@dataclass(frozen=True)
class Emissions:
    kind: ClassVar[str] = "emissions"
    limit: float


@dataclass(frozen=True)
class Identity:
    """Returns the demand itself; never admissible."""

    kind: ClassVar[str] = "identity"


Query = (TripCount | RegulationBundle | Wage | WaitEquity | CongestionPricing | SopSelection
         | CongestionContribution | Emissions | Identity)

QUERY_TYPES = {c.kind: c for c in (TripCount, RegulationBundle, Wage, WaitEquity, CongestionPricing,
                                   SopSelection, CongestionContribution, Emissions, Identity)}

ADMISSIBLE = frozenset({"trip_count", "regulation", "wage", "wait_equity", "congestion_pricing",
                        "sop", "congestion_contribution", "emissions"})
OPTIMIZATION = frozenset({"congestion_pricing", "sop"})


def is_admissible(query, whitelist=ADMISSIBLE) -> bool:
    return query.kind in whitelist


def served_demand(trips: Sequence[TripRecord], network: Network, scale: float) -> np.ndarray:
    return demand_matrix(trips, network.n) * scale


def eval_query(query, trips: Sequence[TripRecord], network: Network, c_w: dict | None = None,
               pk_mp: bytes | None = None):
    """Deterministic answer ``z``. Raises CannotVerify for a missing or invalid certificate."""
    kind = query.kind
    if kind == "trip_count":
        return len(trips)
    if kind == "regulation":
        return int(all(p.holds(trips, network, pk_mp) for p in query.predicates))
    if kind == "wage":
        return int(all(abs(t.driver_wage - wage_formula(t, query.alpha, query.beta)) <= WAGE_TOL
                       for t in trips))
    if kind == "wait_equity":
        return int(WaitTimeEquity(query.regions, query.tau).holds(trips, network, pk_mp))
    if kind == "congestion_contribution":
        return int(CongestionContributionLimit(query.background, query.limit).holds(trips, network, pk_mp))
    if kind == "emissions":
        return int(EmissionsLimit(query.limit).holds(trips, network, pk_mp))
    if kind == "congestion_pricing":
        if c_w is None:
            raise CannotVerify("congestion pricing needs a KKT certificate")
        try:
            cert = KktCertificate.from_dict(c_w)
        except (KeyError, TypeError, ValueError) as exc:
            raise CannotVerify(f"malformed KKT certificate: {exc}") from None
        demand = served_demand(trips, network, query.scale)
        if not check_kkt(network, demand, cert.flows, cert.potentials, query.tol):
            raise CannotVerify("KKT conditions not satisfied")
        return [float(p) for p in compute_tolls(network, cert.total(network.m))]
    if kind == "sop":
        if c_w is None:
            raise CannotVerify("project selection needs per-project LP certificates")
        try:
            certs = [None if c is None else LpCertificate(np.array([float.fromhex(v) for v in c["primal"]]),
                                                          np.array([float.fromhex(v) for v in c["dual"]]))
                     for c in c_w["projects"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise CannotVerify(f"malformed LP certificates: {exc}") from None
        demand = served_demand(trips, network, query.scale)
        out = verify_sop(network, query.projects, demand, certs)
        if out is None:
            raise CannotVerify("a project certificate failed")
        return out[0]
    raise ValueError(f"query kind {kind!r} cannot be evaluated")


def build_certificate(query, trips: Sequence[TripRecord], network: Network) -> dict | None:
    """Provider side: solve the optimization behind ``query`` and package ``c_w``."""
    if query.kind == "congestion_pricing":
        demand = served_demand(trips, network, query.scale)
        return solve_social_optimum_tt(network, demand).certificate.to_dict()
    if query.kind == "sop":
        demand = served_demand(trips, network, query.scale)
        res = solve_sop(network, query.projects, demand, j_mp=MpObjective())
        return {"projects": [None if c is None else {"primal": [float(v).hex() for v in c.primal],
                                                     "dual": [float(v).hex() for v in c.dual]}
                             for c in res.certificates]}
    return None


# --------------------------------------------------------------------------
# Serialization


def _predicate_to_dict(p) -> dict:
    d = {"kind": p.kind}
    for name in p.__dataclass_fields__:
        d[name] = list(getattr(p, name)) if isinstance(getattr(p, name), tuple) else getattr(p, name)
    return d


def _predicate_from_dict(d: dict):
    cls = PREDICATES[d["kind"]]
    args = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k != "kind"}
    return cls(**args)


def query_to_dict(query) -> dict:
    d: dict[str, Any] = {"kind": query.kind}
    for name in query.__dataclass_fields__:
        v = getattr(query, name)
        if name == "predicates":
            d[name] = [_predicate_to_dict(p) for p in v]
        elif name == "projects":
            d[name] = [{"id": p.id, "edits": p.to_text()} for p in v]
        elif isinstance(v, tuple):
            d[name] = list(v)
        else:
            d[name] = v
    return d


def query_from_dict(d: dict):
    cls = QUERY_TYPES[d["kind"]]
    args = {}
    for k, v in d.items():
        if k == "kind":
            continue
        if k == "predicates":
            args[k] = tuple(_predicate_from_dict(p) for p in v)
        elif k == "projects":
            args[k] = tuple(parse_project(p["id"], p["edits"]) for p in v)
        elif isinstance(v, list):
            args[k] = tuple(v)
        else:
            args[k] = v
    return cls(**args)


def query_id(query) -> str:
    return f"{query.kind}:{canonical_json(query_to_dict(query))}"


def validate_witness_trips(trips: Sequence[TripRecord], network: Network) -> bool:
    return all(not validate_trip(t, network) for t in trips)


__all__ = [
    "CannotVerify", "QueryRejected", "canonical_json", "wage_formula", "mean_wait_by_region",
    "edge_traversal_counts", "traversal_durations", "WaitTimeEquity", "CongestionContributionLimit",
    "SpeedLimit", "Period2Accuracy", "EmissionsLimit", "TripCount", "RegulationBundle", "Wage",
    "WaitEquity", "CongestionPricing", "SopSelection", "CongestionContribution", "Emissions",
    "Identity", "ADMISSIBLE", "OPTIMIZATION", "is_admissible", "eval_query", "build_certificate",
    "query_to_dict", "query_from_dict", "query_id", "served_demand"
]
