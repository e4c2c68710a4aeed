"""Aggregated roadside audits: one sensor per edge, aggregate count only.

The sensors elect a leader by a coin flip between MA and MP, send their
per-edge counts to it encrypted under its key, and the leader reports only the
aggregate ``phi`` (signed) to both parties. Afterwards whitelists are cleared
and the sensors erase their data, each step under joint authorization.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

from .. import crypto
from ..harness.events import MA, MP, EventBus, NullBus
from ..netmodel import TripRecord
from .counting import phi_total
from .sensors import SensorState, signals_from_trips


@dataclass(frozen=True)
class Party:
    """Signing identity of MA or MP as seen by sensors."""

    name: str
    keys: crypto.KeyPair


@dataclass(frozen=True)
class AraAggregate:
    phi: int
    contributors: tuple[str, ...]
    leader: str
    signature: bytes = b""

    def message(self) -> bytes:
        return f"ara phi={self.phi} leader={self.leader}".encode()


@dataclass(frozen=True)
class AraPublic:
    """What the evaluation circuit learns from ARA."""

    phi: int
    epsilon: float = 0.0


def make_ara_sensors(m: int, rng: random.Random, bus: EventBus | None = None) -> list[SensorState]:
    return [SensorState(f"ara-{e}", e, rng, bus) for e in range(m)]


def elect_leader(n_sensors: int, rng: random.Random, bus: EventBus) -> int:
    """Commit-reveal coin flip between MA (first) and MP."""
    a = crypto.CoinFlipParty(MA, crypto.random_bytes(rng, 32), crypto.new_nonce(rng))
    b = crypto.CoinFlipParty(MP, crypto.random_bytes(rng, 32), crypto.new_nonce(rng))
    bus.send(MA, MP, "coin_commit", a.commitment())
    bus.send(MP, MA, "coin_commit", b.commitment())
    bits = crypto.run_coin_flip(a, b)
    bus.send(MA, MP, "coin_reveal", b"".join(a.reveal()))
    bus.send(MP, MA, "coin_reveal", b"".join(b.reveal()))
    return crypto.bits_to_index(bits, n_sensors)


def ara_run(sensors: Sequence[SensorState], trips: Sequence[TripRecord], ma: Party, mp: Party,
            rng: random.Random, bus: EventBus | None = None, gps_drop: float = 0.0) -> AraAggregate:
    bus = bus if bus is not None else NullBus()
    by_edge = {s.location: s for s in sensors}
    for sig in signals_from_trips(list(trips), rng, gps_drop):
        s = by_edge.get(sig.location)
        if s is not None:
            s.observe(sig)

    for s in sensors:
        s.approve(MA, ("transmit",))
        s.approve(MP, ("transmit",))
    leader = sensors[elect_leader(len(sensors), rng, bus)]

    def joint(sensor, action):
        sensor.approve(MA, action)
        sensor.approve(MP, action)

    for s in sensors:
        if s is leader:
            continue
        joint(s, ("allow_send", leader.pk))
        joint(leader, ("allow_receive", s.pk))
    joint(leader, ("allow_send", ma.keys.public))
    joint(leader, ("allow_send", mp.keys.public))

    total = leader.trip_count()
    contributors = [leader.id]
    for s in sensors:
        if s is leader:
            continue
        ct = s.transmit(leader.pk, leader.pke_pk, leader.name, str(s.trip_count()).encode(), rng)
        total += int(leader.receive(s.pk, ct).decode())
        contributors.append(s.id)

    agg = AraAggregate(total, tuple(contributors), leader.id)
    agg = AraAggregate(total, agg.contributors, leader.id, leader.sign(agg.message()))
    report = agg.message() + b" sig=" + agg.signature.hex().encode()
    leader.publish(ma.keys.public, MA, "ara_phi", report)
    leader.publish(mp.keys.public, MP, "ara_phi", report)

    for s in sensors:
        joint(s, ("clear_whitelists",))
        joint(s, ("erase",))
        s.erase()
    return agg


def ara_test(trips_w: Sequence[TripRecord], phi: int, epsilon: float = 0.0) -> bool:
    """``|phi - sum_e phi(e, trips_w)| <= epsilon * phi``."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    return abs(phi - phi_total(trips_w)) <= epsilon * phi
