"""Per-edge trip counts that roadside audits measure."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

from ..netmodel import TripRecord, traversals


def phi(edge: int, trips: Iterable[TripRecord]) -> int:
    """Trips with at least one Period-2/3 traversal of ``edge``."""
    return sum(1 for t in trips if any(e == edge for e, _, _ in traversals(t)))


def phi_by_edge(trips: Iterable[TripRecord]) -> Counter:
    out: Counter = Counter()
    for t in trips:
        for e in {e for e, _, _ in traversals(t)}:
            out[e] += 1
    return out


def phi_total(trips: Iterable[TripRecord]) -> int:
    """Aggregate ``sum_e phi(e, trips)``."""
    return sum(phi_by_edge(trips).values())


def round_of(time: int, round_len: int) -> int:
    return time // round_len


def phi_round(edge: int, rnd: int, round_len: int, trips: Iterable[TripRecord]) -> int:
    """Trips traversing ``edge`` with an entry time inside round ``rnd``."""
    return sum(1 for t in trips
               if any(e == edge and round_of(s, round_len) == rnd for e, s, _ in traversals(t)))


def phi_rounds(trips: Sequence[TripRecord], round_len: int) -> Counter:
    """``(round, edge) -> phi_round`` for every pair with a nonzero count."""
    out: Counter = Counter()
    for t in trips:
        for key in {(round_of(s, round_len), e) for e, s, _ in traversals(t)}:
            out[key] += 1
    return out
