"""Randomized roadside audits: a few mobile sensors, re-assigned every round.

Each round the authority samples ``k = max(1, round(m * p))`` edges and parks
one sensor on each. Sensors sign every measurement; at the end they publish
signed per-(round, edge) counts. Only those counts reach the authority.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .. import crypto
from ..harness.events import MA, MP, EventBus, NullBus
from ..netmodel import TripRecord
from .counting import phi_rounds
from .sensors import Measurement, SensorState, Signal, signals_from_trips


def sample_size(m: int, p: float) -> int:
    if not 0.0 < p < 1.0:
        raise ValueError("audit probability must lie in (0, 1); use aggregated audits for full coverage")
    return min(m, max(1, round(m * p)))


def rra_sample(seed: bytes | int, m: int, p: float, rnd: int) -> tuple[int, ...]:
    """Uniform sample without replacement, fixed by ``(seed, rnd)``."""
    k = sample_size(m, p)
    if isinstance(seed, int):
        seed = seed.to_bytes(16, "big", signed=True)
    sub = random.Random(hashlib.sha256(seed + rnd.to_bytes(8, "big")).digest())
    return tuple(sorted(sub.sample(range(m), k)))


@dataclass(frozen=True)
class AuditRecord:
    sensor_id: str
    round: int
    edge: int
    count: int
    signature: bytes = b""

    def message(self) -> bytes:
        return f"rra sensor={self.sensor_id} round={self.round} edge={self.edge} count={self.count}".encode()

    def line(self) -> str:
        return f"{self.message().decode()} sig={self.signature.hex()}"


@dataclass(frozen=True)
class RraPublic:
    """Audited ``(round, edge) -> count`` pairs, as seen by the evaluation circuit."""

    counts: tuple[tuple[int, int, int], ...]  # (round, edge, count)
    round_len: int = 4

    def as_dict(self) -> dict[tuple[int, int], int]:
        return {(r, e): c for r, e, c in self.counts}


@dataclass
class RraResult:
    records: list[AuditRecord]
    measurements: list[Measurement]
    rejected: list[tuple[object, str]]
    samples: dict[int, tuple[int, ...]]

    def public(self, round_len: int) -> RraPublic:
        return RraPublic(tuple(sorted((r.round, r.edge, r.count) for r in self.records)), round_len)


def verify_measurement(m: Measurement, registry: dict[str, bytes]) -> bool:
    pk = registry.get(m.sensor_id)
    return pk is not None and crypto.verify_sig(pk, m.message(), m.signature)


def verify_records(records: Iterable[AuditRecord], registry: dict[str, bytes]) -> bool:
    for r in records:
        pk = registry.get(r.sensor_id)
        if pk is None or not crypto.verify_sig(pk, r.message(), r.signature):
            return False
    return True


def make_rra_sensors(m: int, p: float, rng: random.Random, bus: EventBus | None = None,
                     round_len: int = 4) -> list[SensorState]:
    return [SensorState(f"rra-{k}", None, rng, bus, signing=True, round_len=round_len)
            for k in range(sample_size(m, p))]


def rra_run(sensors: Sequence[SensorState], trips: Sequence[TripRecord], rounds: int, seed: bytes | int,
            m: int, p: float, ma_pk: bytes, mp_pk: bytes, rng: random.Random | None = None,
            bus: EventBus | None = None, gps_drop: float = 0.0,
            relayed: Sequence[tuple[int, Signal]] = ()) -> RraResult:
    """Run ``rounds`` audit rounds.

    ``relayed`` injects ``(round, signal)`` pairs into the first sensor in that
    round, as an authority relaying a signal picked up elsewhere would; such
    signals are rejected unless they really come from the sensor's edge.
    """
    bus = bus if bus is not None else NullBus()
    if len(sensors) != sample_size(m, p):
        raise ValueError(f"need {sample_size(m, p)} sensors for m={m}, p={p}")
    round_len = sensors[0].round_len
    signals = signals_from_trips(list(trips), rng, gps_drop)
    # (relayed?, signal) per round; relayed signals all go to the first sensor
    by_round: dict[int, list[tuple[bool, Signal]]] = {}
    for s in signals:
        by_round.setdefault(s.timestamp // round_len, []).append((False, s))
    for r, sig in relayed:
        by_round.setdefault(r, []).append((True, sig))
    samples = {}
    for r in range(rounds):
        edges = rra_sample(seed, m, p, r)
        samples[r] = edges
        for s, e in zip(sensors, edges):
            s.location = e
        for is_relay, sig in by_round.get(r, []):
            if is_relay:
                sensors[0].observe(sig)
                continue
            for s in sensors:
                if s.location == sig.location:
                    s.observe(sig)

    for s in sensors:
        for party in (MA, MP):
            s.approve(party, ("transmit",))
        for pk in (ma_pk, mp_pk):
            s.approve(MA, ("allow_send", pk))
            s.approve(MP, ("allow_send", pk))

    records = []
    measurements = []
    rejected = []
    for k, s in enumerate(sensors):
        counts = s.counts()
        for r in range(rounds):
            edge = samples[r][k]
            rec = AuditRecord(s.id, r, edge, counts.get((r, edge), 0))
            rec = AuditRecord(rec.sensor_id, r, edge, rec.count, s.sign(rec.message()))
            records.append(rec)
            s.publish(ma_pk, MA, "rra_count", rec.line().encode())
            s.publish(mp_pk, MP, "rra_count", rec.line().encode())
        measurements.extend(s.log)
        rejected.extend(s.rejected)
    for s in sensors:
        for party in (MA, MP):
            s.approve(party, ("clear_whitelists",))
            s.approve(party, ("erase",))
        s.erase()
    return RraResult(records, measurements, rejected, samples)


def counts_from_measurements(measurements: Iterable[Measurement], registry: dict[str, bytes]
                             ) -> dict[tuple[int, int], int]:
    """Recount ``(round, edge)`` from verified measurements; unverifiable ones are skipped."""
    keys: dict[tuple[int, int], set] = {}
    for m in measurements:
        if m.period in (2, 3) and m.location == m.edge and verify_measurement(m, registry):
            keys.setdefault((m.round, m.edge), set()).add(m.trip_key())
    return {k: len(v) for k, v in keys.items()}


def rra_test(trips_w: Sequence[TripRecord], public: RraPublic) -> bool:
    """Every audited ``(round, edge)`` count matches the witness trips exactly."""
    claimed = phi_rounds(trips_w, public.round_len)
    return all(claimed.get((r, e), 0) == c for r, e, c in public.counts)
