"""Road network, demand and served-trip records.

Timestamps are integer multiples of the timestep ``dt``. A trip's trajectory
covers only the time from matching to drop-off: edges entered in
``[match_time, pickup_time)`` are Period 2 (driving to the rider), edges entered
in ``[pickup_time, dropoff_time]`` are Period 3 (carrying the rider).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Iterable, Literal, Sequence

import networkx as nx
import numpy as np

from . import crypto

# --------------------------------------------------------------------------
# Network


@dataclass(frozen=True)
class DelayFn:
    """Travel time of a road as a function of its flow.

    ``affine``: ``a + b*x``; ``bpr``: ``a * (1 + beta * (x/c)**4)``.
    """

    kind: Literal["affine", "bpr"]
    a: float
    b: float = 0.0
    beta: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("affine", "bpr"):
            raise ValueError(f"unknown delay kind {self.kind!r}")
        if not self.a > 0:
            raise ValueError(f"free-flow time must be positive, got a={self.a}")
        if self.b < 0 or self.beta < 0:
            raise ValueError("delay slope parameters must be nonnegative (convex, increasing)")
        if not self.c > 0:
            raise ValueError(f"capacity must be positive, got c={self.c}")

    @classmethod
    def affine(cls, a: float, b: float = 0.0) -> "DelayFn":
        return cls("affine", float(a), float(b))

    @classmethod
    def bpr(cls, a: float, beta: float, c: float) -> "DelayFn":
        return cls("bpr", float(a), 0.0, float(beta), float(c))

    def __call__(self, x):
        if self.kind == "affine":
            return self.a + self.b * x
        return self.a * (1.0 + self.beta * (x / self.c) ** 4)

    def derivative(self, x):
        if self.kind == "affine":
            return self.b + 0.0 * x
        return 4.0 * self.a * self.beta * x**3 / self.c**4

    def second_derivative(self, x):
        if self.kind == "affine":
            return 0.0 * x
        return 12.0 * self.a * self.beta * x**2 / self.c**4

    def marginal(self, x):
        """d/dx [x f(x)] = f(x) + x f'(x)."""
        return self(x) + x * self.derivative(x)

    def params(self) -> tuple[float, ...]:
        if self.kind == "affine":
            return (self.a, self.b)
        return (self.a, self.beta, self.c)

    def spec(self) -> str:
        return " ".join([self.kind, *(repr(float(p)) for p in self.params())])

    @classmethod
    def from_tokens(cls, kind: str, params: Sequence[str]) -> "DelayFn":
        vals = [float(p) for p in params]
        if kind == "affine":
            if len(vals) not in (1, 2):
                raise ValueError("affine delay takes 'a [b]'")
            return cls.affine(*vals)
        if kind == "bpr":
            if len(vals) != 3:
                raise ValueError("bpr delay takes 'a beta c'")
            return cls.bpr(*vals)
        raise ValueError(f"unknown delay kind {kind!r}")


@dataclass(frozen=True)
class Edge:
    id: int
    src: int
    dst: int
    delay: DelayFn
    length: float = 1.0


@dataclass(frozen=True)
class Network:
    n: int
    edges: tuple[Edge, ...]
    dt: float = 1.0
    horizon: int = 100

    def __post_init__(self):
        for k, e in enumerate(self.edges):
            if e.id != k:
                raise ValueError(f"edge ids must be 0..m-1 in order; edge {k} has id {e.id}")
            if not (0 <= e.src < self.n and 0 <= e.dst < self.n):
                raise ValueError(f"edge {e.id} references a vertex outside 0..{self.n - 1}")
            if e.length < 0:
                raise ValueError(f"edge {e.id} has negative length")

    @property
    def m(self) -> int:
        return len(self.edges)

    def has_edge(self, edge_id: int) -> bool:
        return isinstance(edge_id, (int, np.integer)) and 0 <= edge_id < self.m

    @cached_property
    def out_edges(self) -> tuple[tuple[int, ...], ...]:
        out = [[] for _ in range(self.n)]
        for e in self.edges:
            out[e.src].append(e.id)
        return tuple(map(tuple, out))

    @cached_property
    def in_edges(self) -> tuple[tuple[int, ...], ...]:
        inc = [[] for _ in range(self.n)]
        for e in self.edges:
            inc[e.dst].append(e.id)
        return tuple(map(tuple, inc))

    @cached_property
    def incidence(self) -> np.ndarray:
        """Node-edge incidence: +1 at the tail, -1 at the head (out minus in)."""
        a = np.zeros((self.n, self.m))
        for e in self.edges:
            a[e.src, e.id] += 1.0
            a[e.dst, e.id] -= 1.0
        return a

    def free_flow(self) -> np.ndarray:
        return np.array([e.delay.a for e in self.edges])

    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.edges])

    def steps(self, edge_id: int) -> int:
        """Free-flow traversal time in whole timesteps (at least one)."""
        return max(1, math.ceil(self.edges[edge_id].delay.a / self.dt - 1e-9))

    def travel_times(self, x) -> np.ndarray:
        return np.array([e.delay(xe) for e, xe in zip(self.edges, x)])

    def marginal_costs(self, x) -> np.ndarray:
        return np.array([e.delay.marginal(xe) for e, xe in zip(self.edges, x)])

    def derivatives(self, x) -> np.ndarray:
        return np.array([e.delay.derivative(xe) for e, xe in zip(self.edges, x)])

    def total_travel_time(self, x) -> float:
        return float(sum(xe * e.delay(xe) for e, xe in zip(self.edges, x)))

    def is_strongly_connected(self) -> bool:
        g = nx.DiGraph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from((e.src, e.dst) for e in self.edges)
        return nx.is_strongly_connected(g)

    def with_edges(self, edges: Iterable[Edge]) -> "Network":
        return replace(self, edges=tuple(edges))

    def to_text(self) -> str:
        lines = [f"vertices {self.n}", f"dt {self.dt!r}", f"horizon {self.horizon}"]
        for e in self.edges:
            lines.append(f"edge {e.src} {e.dst} {e.delay.spec()} length={e.length!r}")
        return "\n".join(lines) + "\n"


def parse_edge_line(tokens: Sequence[str], edge_id: int) -> Edge:
    """``<src> <dst> <kind> <params...> [length=<l>]``"""
    tokens = list(tokens)
    length = 1.0
    if tokens and tokens[-1].startswith("length="):
        length = float(tokens.pop().split("=", 1)[1])
    if len(tokens) < 4:
        raise ValueError("edge needs '<src> <dst> <kind> <params...>'")
    src, dst, kind, *params = tokens
    return Edge(edge_id, int(src), int(dst), DelayFn.from_tokens(kind, params), length)


def parse_network(text: str) -> Network:
    """Parse the plain-text edge-list format.

    ::

        vertices 4
        dt 1
        horizon 40
        edge 0 1 affine 1 0.5
        edge 1 2 bpr 2 0.15 10 length=2
    """
    n = None
    dt, horizon = 1.0, 100
    edges: list[Edge] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        try:
            if key == "vertices":
                n = int(rest[0])
            elif key == "dt":
                dt = float(rest[0])
            elif key == "horizon":
                horizon = int(rest[0])
            elif key == "edge":
                e = parse_edge_line(rest, len(edges))
                if n is not None and not (0 <= e.src < n and 0 <= e.dst < n):
                    raise ValueError(f"edge endpoint outside 0..{n - 1}")
                edges.append(e)
            else:
                raise ValueError(f"unknown directive {key!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    if n is None:
        n = 1 + max((max(e.src, e.dst) for e in edges), default=-1)
    return Network(n, tuple(edges), dt, horizon)


def shortest_paths(network: Network, costs: Sequence[float], source: int):
    """Dijkstra from ``source`` over edge ``costs``.

    Returns ``(dist, paths)`` where ``paths[v]`` is a tuple of edge ids. Among
    parallel edges the cheapest (then lowest id) is used.
    """
    best: dict[tuple[int, int], int] = {}
    for e in network.edges:
        key = (e.src, e.dst)
        if key not in best or costs[e.id] < costs[best[key]]:
            best[key] = e.id
    g = nx.DiGraph()
    g.add_nodes_from(range(network.n))
    for (u, v), eid in best.items():
        g.add_edge(u, v, weight=float(costs[eid]), eid=eid)
    dist, node_paths = nx.single_source_dijkstra(g, source)
    paths = {
        v: tuple(g.edges[a, b]["eid"] for a, b in zip(p, p[1:]))
        for v, p in node_paths.items()
    }
    return dist, paths


# --------------------------------------------------------------------------
# Demand


def validate_demand(demand: np.ndarray, n: int) -> np.ndarray:
    demand = np.asarray(demand, dtype=float)
    if demand.ndim not in (2, 3) or demand.shape[:2] != (n, n):
        raise ValueError(f"demand must be {n}x{n}[xT], got shape {demand.shape}")
    if (demand < 0).any():
        raise ValueError("demand entries must be nonnegative")
    diag = demand[np.arange(n), np.arange(n)]
    if np.any(diag != 0):
        raise ValueError("demand from a location to itself must be zero")
    return demand


# --------------------------------------------------------------------------
# Trips


@dataclass(frozen=True)
class Vehicle:
    vehicle_id: str
    make_model: str = "generic"
    emission_rate: float = 0.0  # grams per edge traversal


def match_message(vehicle_id: str, t: int) -> bytes:
    return f"You have been matched to vehicle {vehicle_id} at time {t}".encode()


@dataclass(frozen=True)
class MatchNotice:
    message: bytes
    signature: bytes

    @classmethod
    def issue(cls, secret: bytes, vehicle_id: str, t: int) -> "MatchNotice":
        msg = match_message(vehicle_id, t)
        return cls(msg, crypto.sign(secret, msg))

    def verify(self, public: bytes) -> bool:
        return crypto.verify_sig(public, self.message, self.signature)

    def declared(self) -> tuple[str, int] | None:
        """(vehicle_id, time) stated in the message, or None if malformed."""
        prefix = b"You have been matched to vehicle "
        if not self.message.startswith(prefix):
            return None
        body = self.message[len(prefix):].decode(errors="replace")
        veh, sep, t = body.rpartition(" at time ")
        if not sep:
            return None
        try:
            return veh, int(t)
        except ValueError:
            return None


@dataclass(frozen=True)
class TripRecord:
    trip_id: str
    pickup_loc: int
    dropoff_loc: int
    request_time: int
    match_time: int
    pickup_time: int
    dropoff_time: int
    driver_wage: float
    trip_fare: float
    trajectory: tuple[tuple[int, int], ...]  # (edge id, entry time)
    vehicle: Vehicle
    match_notice: MatchNotice | None = None

    def encode(self) -> bytes:
        return encode_trip(self)


class InvalidTrip(ValueError):
    pass


# Canonical encoding: each field is a 4-byte big-endian length followed by its
# bytes, in declaration order. Integers are 8-byte signed big-endian, reals are
# IEEE-754 doubles, strings UTF-8; nested records are encoded recursively.

def _field(b: bytes) -> bytes:
    return len(b).to_bytes(4, "big") + b


def _int(v: int) -> bytes:
    return _field(int(v).to_bytes(8, "big", signed=True))


def _real(v: float) -> bytes:
    return _field(struct.pack(">d", float(v)))


def _str(v: str) -> bytes:
    return _field(v.encode())


def encode_trip(trip: TripRecord) -> bytes:
    traj = b"".join(_field(_int(e) + _int(t)) for e, t in trip.trajectory)
    veh = _str(trip.vehicle.vehicle_id) + _str(trip.vehicle.make_model) + _real(trip.vehicle.emission_rate)
    notice = b""
    if trip.match_notice is not None:
        notice = _field(trip.match_notice.message) + _field(trip.match_notice.signature)
    return b"".join([
        _str(trip.trip_id),
        _int(trip.pickup_loc),
        _int(trip.dropoff_loc),
        _int(trip.request_time),
        _int(trip.match_time),
        _int(trip.pickup_time),
        _int(trip.dropoff_time),
        _real(trip.driver_wage),
        _real(trip.trip_fare),
        _field(len(trip.trajectory).to_bytes(4, "big") + traj),
        _field(veh),
        _field(notice),
    ])


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def field(self) -> bytes:
        if self.pos + 4 > len(self.data):
            raise ValueError("truncated field header")
        n = int.from_bytes(self.data[self.pos:self.pos + 4], "big")
        self.pos += 4
        if self.pos + n > len(self.data):
            raise ValueError("truncated field body")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def int(self) -> int:
        return int.from_bytes(self.field(), "big", signed=True)

    def real(self) -> float:
        return struct.unpack(">d", self.field())[0]

    def str(self) -> str:
        return self.field().decode()

    def done(self) -> bool:
        return self.pos == len(self.data)


def decode_trip(data: bytes) -> TripRecord:
    r = _Reader(data)
    trip_id = r.str()
    ints = [r.int() for _ in range(6)]
    wage, fare = r.real(), r.real()
    traj_blob = r.field()
    count = int.from_bytes(traj_blob[:4], "big")
    tr = _Reader(traj_blob[4:])
    trajectory = []
    for _ in range(count):
        pair = _Reader(tr.field())
        trajectory.append((pair.int(), pair.int()))
    vr = _Reader(r.field())
    vehicle = Vehicle(vr.str(), vr.str(), vr.real())
    nr = _Reader(r.field())
    notice = None if nr.done() else MatchNotice(nr.field(), nr.field())
    if not (r.done() and tr.done()):
        raise ValueError("trailing bytes in trip encoding")
    return TripRecord(trip_id, *ints, wage, fare, tuple(trajectory), vehicle, notice)


def validate_trip(trip: TripRecord, network: Network) -> list[str]:
    """Violation codes for a trip record; empty when the record is well formed."""
    codes: list[str] = []
    if not (trip.request_time <= trip.match_time <= trip.pickup_time <= trip.dropoff_time):
        codes.append("TimestampOrder")
    if not (0 <= trip.pickup_loc < network.n and 0 <= trip.dropoff_loc < network.n):
        codes.append("UnknownVertex")
    if trip.driver_wage < 0 or trip.trip_fare < 0:
        codes.append("NegativeAmount")
    traj = trip.trajectory
    if any(not network.has_edge(e) for e, _ in traj):
        codes.append("UnknownEdge")
        return codes
    edges = [network.edges[e] for e, _ in traj]
    if any(a.dst != b.src for a, b in zip(edges, edges[1:])):
        codes.append("BrokenPath")
    times = [t for _, t in traj]
    if any(t1 > t2 for t1, t2 in zip(times, times[1:])):
        codes.append("EntryTimeOrder")
    if any(not (trip.match_time <= t <= trip.dropoff_time) for t in times):
        codes.append("TrajectorySpan")
    if "BrokenPath" not in codes and "TimestampOrder" not in codes:
        p3 = [e for e, (_, t) in zip(edges, traj) if t >= trip.pickup_time]
        p2 = [e for e, (_, t) in zip(edges, traj) if t < trip.pickup_time]
        if p2 and p2[-1].dst != trip.pickup_loc:
            codes.append("EndpointMismatch")
        elif p3 and (p3[0].src != trip.pickup_loc or p3[-1].dst != trip.dropoff_loc):
            codes.append("EndpointMismatch")
        elif not p3 and trip.pickup_loc != trip.dropoff_loc:
            codes.append("EndpointMismatch")
    return codes


def period_intervals(trip: TripRecord) -> tuple[tuple[int, int], tuple[int, int]]:
    """Period 2 as ``[match, pickup)`` and Period 3 as ``[pickup, dropoff]``."""
    if not (trip.request_time <= trip.match_time <= trip.pickup_time <= trip.dropoff_time):
        raise InvalidTrip(f"{trip.trip_id}: timestamps out of order")
    return (trip.match_time, trip.pickup_time), (trip.pickup_time, trip.dropoff_time)


def period_at(trip: TripRecord, t: int) -> int:
    (m, p), (_, d) = period_intervals(trip)
    if m <= t < p:
        return 2
    if p <= t <= d:
        return 3
    raise InvalidTrip(f"{trip.trip_id}: time {t} outside the matched interval")


def traversals(trip: TripRecord) -> list[tuple[int, int, int]]:
    """One ``(edge, entry_time, period)`` tuple per trajectory element."""
    period_intervals(trip)
    return [(e, t, period_at(trip, t)) for e, t in trip.trajectory]


def period_counts(trip: TripRecord) -> tuple[int, int]:
    """Number of Period-2 and Period-3 edge traversals."""
    periods = [p for _, _, p in traversals(trip)]
    return periods.count(2), periods.count(3)


def trip_emissions(trip: TripRecord) -> float:
    return trip.vehicle.emission_rate * len(trip.trajectory)


def demand_matrix(trips: Iterable[TripRecord], n: int) -> np.ndarray:
    """Served trips aggregated into an n x n origin-destination matrix."""
    out = np.zeros((n, n))
    for t in trips:
        if t.pickup_loc != t.dropoff_loc:
            out[t.pickup_loc, t.dropoff_loc] += 1.0
    return out


@dataclass(frozen=True)
class Request:
    request_id: str
    origin: int
    destination: int
    time: int


def requests_from_tensor(demand: np.ndarray) -> list[Request]:
    """Expand an integer demand tensor into individual requests, time-ordered."""
    demand = np.asarray(demand)
    if np.any(demand != np.round(demand)):
        raise ValueError("per-trip expansion needs an integer demand tensor")
    reqs = []
    n, _, horizon = demand.shape
    for t in range(horizon):
        for i in range(n):
            for j in range(n):
                for _ in range(int(demand[i, j, t])):
                    reqs.append(Request(f"req-{len(reqs):04d}", i, j, t))
    return reqs
