"""Roadside sensors as guarded state machines.

A sensor may send data only to keys on its sender whitelist, accept data only
from keys on its receiver whitelist, and transmit or erase only after both the
authority (MA) and the provider (MP) have approved. Whitelist changes also need
both approvals. Every approval, transfer and rejection is recorded on the bus,
so :func:`check_lifecycle` can replay the log and confirm no data left a sensor
without joint permission.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace
from enum import Enum

from .. import crypto
from ..harness.events import MA, MP, Event, EventBus, NullBus
from ..netmodel import TripRecord, traversals

JOINT = frozenset({MA, MP})


class SensorPolicyError(Exception):
    """A sensor refused an operation its restrictions forbid."""


class Lifecycle(Enum):
    COLLECTING = "collecting"
    REPORTING = "reporting"
    ERASED = "erased"


@dataclass(frozen=True)
class Signal:
    """What a passing MP vehicle broadcasts: identity, declared period and position."""

    vehicle_id: str
    period: int
    timestamp: int
    location: int  # edge the vehicle is on
    assignment: int  # match time of the trip being served, from the vehicle's signed notice


@dataclass(frozen=True)
class Measurement:
    sensor_id: str
    edge: int
    round: int
    vehicle_id: str
    period: int
    timestamp: int
    location: int
    assignment: int
    signature: bytes = b""

    def message(self) -> bytes:
        return (f"sensor={self.sensor_id} round={self.round} edge={self.edge} veh={self.vehicle_id} "
                f"period={self.period} time={self.timestamp} loc={self.location} "
                f"asg={self.assignment}").encode()

    def line(self) -> str:
        return (f"round={self.round} edge={self.edge} veh={self.vehicle_id} period={self.period} "
                f"sig={self.signature.hex()}")

    def trip_key(self) -> tuple[str, int]:
        return self.vehicle_id, self.assignment


def signals_from_trips(trips: list[TripRecord], rng: random.Random | None = None,
                       gps_drop: float = 0.0) -> list[Signal]:
    """Broadcasts of the true trips; each one is independently lost with probability ``gps_drop``."""
    out = []
    for t in trips:
        for e, s, period in traversals(t):
            if gps_drop > 0 and rng is not None and rng.random() < gps_drop:
                continue
            out.append(Signal(t.vehicle.vehicle_id, period, s, e, t.match_time))
    return out


def action_bytes(action: tuple) -> bytes:
    return " ".join(a.hex() if isinstance(a, bytes) else str(a) for a in action).encode()


class SensorState:
    def __init__(self, sensor_id: str, location: int | None, rng: random.Random,
                 bus: EventBus | None = None, signing: bool = False, round_len: int = 4):
        self.id = sensor_id
        self.location = location
        self._keys = crypto.keygen(rng)
        self._pke = crypto.pke_keygen(rng)
        self.sender_whitelist: set[bytes] = set()
        self.receiver_whitelist: set[bytes] = set()
        self.log: list[Measurement] = []
        self.rejected: list[tuple[object, str]] = []
        self.lifecycle = Lifecycle.COLLECTING
        self.bus = bus if bus is not None else NullBus()
        self.signing = signing
        self.round_len = round_len
        self._approvals: dict[tuple, set[str]] = {}
        self._transmit_ok = False
        self._erase_ok = False

    @property
    def name(self) -> str:
        return f"sensor:{self.id}"

    @property
    def pk(self) -> bytes:
        return self._keys.public

    @property
    def pke_pk(self) -> bytes:
        return self._pke.public

    def export_secret(self):
        raise SensorPolicyError("secret keys never leave the sensor")

    def sign(self, msg: bytes) -> bytes:
        return crypto.sign(self._keys.secret, msg)

    # -- collection

    def observe(self, signal: Signal) -> Measurement | None:
        if self.lifecycle is not Lifecycle.COLLECTING:
            self._reject(signal, "sensor is not collecting")
            return None
        if signal.location != self.location:
            self._reject(signal, "signal location does not match sensor location")
            return None
        m = Measurement(self.id, self.location, signal.timestamp // self.round_len, signal.vehicle_id,
                        signal.period, signal.timestamp, self.location, signal.assignment)
        if self.signing:
            m = replace(m, signature=self.sign(m.message()))
        self.log.append(m)
        return m

    def _reject(self, what, reason: str):
        self.rejected.append((what, reason))

    def counts(self) -> dict[tuple[int, int], int]:
        """``(round, edge) -> distinct trips seen in Period 2/3``."""
        keys: dict[tuple[int, int], set] = {}
        for m in self.log:
            if m.period in (2, 3):
                keys.setdefault((m.round, m.edge), set()).add(m.trip_key())
        return {k: len(v) for k, v in keys.items()}

    def trip_count(self) -> int:
        return len({m.trip_key() for m in self.log if m.period in (2, 3)})

    # -- joint authorization

    def approve(self, party: str, action: tuple):
        if party not in JOINT:
            raise SensorPolicyError(f"{party} cannot authorize sensor actions")
        self.bus.send(party, self.name, "approve", action_bytes(action))
        got = self._approvals.setdefault(action, set())
        got.add(party)
        if got >= JOINT:
            del self._approvals[action]
            self._apply(action)

    def _apply(self, action: tuple):
        op = action[0]
        if op == "allow_send":
            self.sender_whitelist.add(action[1])
        elif op == "allow_receive":
            self.receiver_whitelist.add(action[1])
        elif op == "clear_whitelists":
            self.sender_whitelist.clear()
            self.receiver_whitelist.clear()
        elif op == "transmit":
            self._transmit_ok = True
            self.lifecycle = Lifecycle.REPORTING
        elif op == "erase":
            self._erase_ok = True
        else:
            raise SensorPolicyError(f"unknown action {op!r}")

    # -- data movement

    def _check_send(self, dest_pk: bytes, dest_name: str):
        if self.lifecycle is Lifecycle.ERASED:
            reason = "sensor data erased"
        elif not self._transmit_ok:
            reason = "transmission not jointly permitted"
        elif dest_pk not in self.sender_whitelist:
            reason = "destination not on sender whitelist"
        else:
            return
        self.bus.send(self.name, dest_name, "policy_reject", reason.encode())
        raise SensorPolicyError(f"{self.name} -> {dest_name}: {reason}")

    def transmit(self, dest_pk: bytes, dest_pke: bytes, dest_name: str, payload: bytes,
                 rng: random.Random) -> bytes:
        """Encrypt ``payload`` to a whitelisted destination."""
        self._check_send(dest_pk, dest_name)
        ct = crypto.pke_encrypt(dest_pke, payload, rng)
        self.bus.send(self.name, dest_name, "sensor_data", ct)
        return ct

    def publish(self, dest_pk: bytes, dest_name: str, kind: str, payload: bytes) -> bytes:
        """Send a signed cleartext report (aggregate) to a whitelisted destination."""
        self._check_send(dest_pk, dest_name)
        self.bus.send(self.name, dest_name, kind, payload)
        return payload

    def receive(self, sender_pk: bytes, ct: bytes) -> bytes:
        if sender_pk not in self.receiver_whitelist:
            self.bus.send(self.name, self.name, "policy_reject", b"sender not on receiver whitelist")
            raise SensorPolicyError(f"{self.name}: sender not on receiver whitelist")
        return crypto.pke_decrypt(self._pke.secret, ct)

    def read_request(self, requester: str, requester_pk: bytes) -> list[Measurement]:
        """Direct read of the raw log; only possible through a permitted transmission."""
        self.bus.send(requester, self.name, "read_request")
        self._check_send(requester_pk, requester)
        return list(self.log)

    def erase(self):
        if not self._erase_ok:
            self.bus.send(self.name, self.name, "policy_reject", b"erase not jointly permitted")
            raise SensorPolicyError(f"{self.name}: erase not jointly permitted")
        self.log.clear()
        self.sender_whitelist.clear()
        self.receiver_whitelist.clear()
        self.lifecycle = Lifecycle.ERASED
        self.bus.send(self.name, self.name, "erased")


def check_lifecycle(events: list[Event]) -> list[str]:
    """Replay the log; return violations where data left a sensor without joint permission."""
    approvals: dict[tuple[str, bytes], set[str]] = {}
    granted: set[tuple[str, bytes]] = set()
    violations = []
    for ev in events:
        if ev.kind == "approve":
            key = (ev.receiver, ev.payload)
            approvals.setdefault(key, set()).add(ev.sender)
            if approvals[key] >= JOINT:
                granted.add(key)
                if ev.payload == b"clear_whitelists":
                    granted = {g for g in granted if g[0] != ev.receiver or not g[1].startswith(b"allow_")}
                    approvals = {k: v for k, v in approvals.items()
                                 if k[0] != ev.receiver or not k[1].startswith(b"allow_")}
        elif ev.sender.startswith("sensor:") and ev.kind not in ("policy_reject", "erased"):
            if (ev.sender, b"transmit") not in granted:
                violations.append(f"event {ev.seq}: {ev.sender} sent {ev.kind} without joint permission")
        elif ev.kind == "erased" and (ev.sender, b"erase") not in granted:
            violations.append(f"event {ev.seq}: {ev.sender} erased without joint permission")
    return violations
