"""The mobility provider: serves requests, commits to its trip records, issues
receipts, answers Merkle-proof requests and queries.

An adversarial provider is modelled by a :class:`Strategy` that transforms the
true served trips into the dataset it actually commits to. The true trips are
never modified.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import crypto
from .authority.queries import (ADMISSIBLE, QueryRejected, build_certificate, eval_query,
                                wage_formula)
from .netmodel import (MatchNotice, Network, Request, TripRecord, Vehicle, encode_trip,
                       shortest_paths, validate_trip)


# --------------------------------------------------------------------------
# Strategies


@dataclass(frozen=True)
class Honest:
    def apply(self, trips: Sequence[TripRecord], secret: bytes) -> list[TripRecord]:
        return list(trips)


@dataclass(frozen=True)
class OmitTrips:
    trip_ids: frozenset[str]

    def apply(self, trips, secret):
        return [t for t in trips if t.trip_id not in self.trip_ids]


@dataclass(frozen=True)
class InjectTrips:
    trips: tuple[TripRecord, ...]

    def apply(self, trips, secret):
        return list(trips) + list(self.trips)


@dataclass(frozen=True)
class TamperTrip:
    trip_id: str
    edits: tuple[tuple[str, object], ...]

    def apply(self, trips, secret):
        changes = dict(self.edits)
        return [replace(t, **changes) if t.trip_id == self.trip_id else t for t in trips]


@dataclass(frozen=True)
class MisreportPeriod:
    """Report the match ``shift`` steps later, relabelling early Period 2 as Period 1.

    Trajectory entries before the new match time are dropped so the record
    stays well formed. With ``resign`` the provider also signs a fresh match
    notice for the new time; otherwise the original notice is kept.
    """

    trip_id: str
    shift: int = 1
    resign: bool = True
    alpha: float = 1.0  # wage per Period 2 edge, dropped with the relabelled entries

    def apply(self, trips, secret):
        out = []
        for t in trips:
            if t.trip_id == self.trip_id:
                match = min(t.match_time + self.shift, t.pickup_time)
                traj = tuple((e, s) for e, s in t.trajectory if s >= match)
                notice = MatchNotice.issue(secret, t.vehicle.vehicle_id, match) if self.resign else t.match_notice
                wage = t.driver_wage - self.alpha * (len(t.trajectory) - len(traj))
                t = replace(t, match_time=match, trajectory=traj, match_notice=notice, driver_wage=wage)
            out.append(t)
        return out


Strategy = Honest | OmitTrips | InjectTrips | TamperTrip | MisreportPeriod


# --------------------------------------------------------------------------
# Service


@dataclass(frozen=True)
class Pricing:
    """Driver wage ``alpha * n2 + beta * n3`` and fare ``base + per_edge * n3``."""

    alpha: float = 1.0
    beta: float = 2.0
    base_fare: float = 2.0
    per_edge: float = 1.0


@dataclass
class FleetVehicle:
    vehicle: Vehicle
    position: int
    available: int = 0


def _timed_path(network: Network, path: Sequence[int], start: int) -> tuple[list[tuple[int, int]], int]:
    out, t = [], start
    for e in path:
        out.append((e, t))
        t += network.steps(e)
    return out, t


def make_trip(network: Network, trip_id: str, request_time: int, match_time: int,
              to_pickup: Sequence[int], to_dropoff: Sequence[int], pickup_loc: int, dropoff_loc: int,
              vehicle: Vehicle, pricing: Pricing, secret: bytes | None) -> TripRecord:
    p2, pickup = _timed_path(network, to_pickup, match_time)
    p3, dropoff = _timed_path(network, to_dropoff, pickup)
    n2, n3 = len(p2), len(p3)
    notice = MatchNotice.issue(secret, vehicle.vehicle_id, match_time) if secret is not None else None
    return TripRecord(
        trip_id=trip_id, pickup_loc=pickup_loc, dropoff_loc=dropoff_loc,
        request_time=request_time, match_time=match_time, pickup_time=pickup, dropoff_time=dropoff,
        driver_wage=pricing.alpha * n2 + pricing.beta * n3,
        trip_fare=pricing.base_fare + pricing.per_edge * n3,
        trajectory=tuple(p2 + p3), vehicle=vehicle, match_notice=notice)


def fabricate_trip(network: Network, trip_id: str, path: Sequence[int], time: int, vehicle: Vehicle,
                   pricing: Pricing = Pricing(), secret: bytes | None = None) -> TripRecord:
    """A plausible fake trip that drives ``path`` with a passenger from ``time``."""
    if not path:
        raise ValueError("a fabricated trip needs at least one edge")
    src, dst = network.edges[path[0]].src, network.edges[path[-1]].dst
    trip = make_trip(network, trip_id, time, time, (), path, src, dst, vehicle, pricing, secret)
    if validate_trip(trip, network):
        raise ValueError(f"fabricated trip is not well formed: {validate_trip(trip, network)}")
    return trip


def serve_and_record(requests: Sequence[Request], network: Network, fleet: Sequence[FleetVehicle],
                     pricing: Pricing = Pricing(), secret: bytes | None = None
                     ) -> tuple[list[TripRecord], list[Request]]:
    """Greedy dispatch on free-flow shortest paths.

    Requests are handled in time order; each goes to the vehicle that can reach
    the pickup earliest (lowest index on ties). Returns ``(trips, unserved)``.
    """
    costs = [float(network.steps(e)) for e in range(network.m)]
    tree_cache: dict[int, tuple[dict, dict]] = {}

    def tree(u):
        if u not in tree_cache:
            tree_cache[u] = shortest_paths(network, costs, u)
        return tree_cache[u]

    trips, unserved = [], []
    for req in sorted(requests, key=lambda r: (r.time, r.request_id)):
        if req.origin == req.destination or req.destination not in tree(req.origin)[0]:
            unserved.append(req)
            continue
        best = None
        for k, fv in enumerate(fleet):
            dist, _ = tree(fv.position)
            if req.origin not in dist:
                continue
            arrival = max(fv.available, req.time) + dist[req.origin]
            if best is None or arrival < best[0]:
                best = (arrival, k)
        if best is None:
            unserved.append(req)
            continue
        fv = fleet[best[1]]
        match = max(fv.available, req.time)
        trip = make_trip(network, f"trip-{len(trips):04d}", req.time, match,
                         tree(fv.position)[1][req.origin], tree(req.origin)[1][req.destination],
                         req.origin, req.destination, fv.vehicle, pricing, secret)
        fv.position, fv.available = req.destination, trip.dropoff_time
        trips.append(trip)
    return trips, unserved


# --------------------------------------------------------------------------
# Receipts, commitment, proofs, answers


@dataclass(frozen=True)
class Receipt:
    trip_id: str
    commitment: bytes
    signature: bytes

    def verify(self, pk_mp: bytes) -> bool:
        return crypto.verify_sig(pk_mp, self.commitment, self.signature)

    def to_text(self) -> str:
        return f"receipt {self.trip_id} {self.commitment.hex()} {self.signature.hex()}"

    @classmethod
    def from_text(cls, line: str) -> "Receipt":
        tag, trip_id, c, s = line.split()
        if tag != "receipt":
            raise ValueError("not a receipt record")
        return cls(trip_id, bytes.fromhex(c), bytes.fromhex(s))


@dataclass(frozen=True)
class Refusal:
    reason: str


@dataclass
class QueryAnswer:
    z: object
    trips: list[bytes]  # Lambda_w as canonical encodings
    nonces: list[bytes]
    certificate: dict | None = None


@dataclass
class ProviderState:
    keypair: crypto.KeyPair
    network: Network
    trips: list[TripRecord] = field(default_factory=list)
    strategy: object = field(default_factory=Honest)
    nonces: dict[str, bytes] = field(default_factory=dict)
    committed: list[TripRecord] = field(default_factory=list)
    committed_nonces: list[bytes] = field(default_factory=list)
    tree: crypto.MerkleTree | None = None
    whitelist: frozenset[str] = ADMISSIBLE

    @property
    def pk(self) -> bytes:
        return self.keypair.public

    @property
    def sigma(self) -> bytes | None:
        return None if self.tree is None else self.tree.root


def issue_receipt(state: ProviderState, trip_id: str, rider_nonce: bytes) -> Receipt:
    for t in state.trips:
        if t.trip_id == trip_id:
            break
    else:
        raise KeyError(f"unknown trip {trip_id}")
    c = crypto.commit(rider_nonce, encode_trip(t))
    state.nonces[trip_id] = rider_nonce
    return Receipt(trip_id, c, crypto.sign(state.keypair.secret, c))


def commit_demand(state: ProviderState, rng: random.Random) -> bytes:
    """Commit to the strategy-transformed dataset; returns the root."""
    truth = {t.trip_id: t for t in state.trips}
    committed = state.strategy.apply(state.trips, state.keypair.secret)
    nonces = []
    for t in committed:
        genuine = truth.get(t.trip_id) == t and t.trip_id in state.nonces
        nonces.append(state.nonces[t.trip_id] if genuine else crypto.new_nonce(rng))
    state.committed = committed
    state.committed_nonces = nonces
    if committed:
        state.tree = crypto.mcommit([encode_trip(t) for t in committed], nonces)
    else:
        state.tree = crypto.MerkleTree([], [[crypto.EMPTY_ROOT]])
    return state.tree.root


def respond_merkle_request(state: ProviderState, receipt: Receipt) -> crypto.MerkleProof | Refusal:
    if state.tree is None:
        return Refusal("no commitment published")
    try:
        index = state.tree.commitments().index(receipt.commitment)
    except ValueError:
        return Refusal("receipt not in committed tree")
    return crypto.merkle_prove(state.tree, index)


def answer_query(state: ProviderState, query) -> QueryAnswer:
    if query.kind not in state.whitelist:
        raise QueryRejected(f"query kind {query.kind!r} is not admissible")
    cert = build_certificate(query, state.committed, state.network)
    z = eval_query(query, state.committed, state.network, cert, state.pk)
    return QueryAnswer(z, [encode_trip(t) for t in state.committed], list(state.committed_nonces), cert)


def correct_wage(trip: TripRecord, pricing: Pricing) -> bool:
    return abs(trip.driver_wage - wage_formula(trip, pricing.alpha, pricing.beta)) <= 1e-9
