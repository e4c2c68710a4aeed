"""The evaluation circuit ``C(x, w)`` checked by the proof system.

Public input ``x``: the published root ``sigma``, the roadside-audit result,
the receipts riders disputed, the query and the network. Witness
``w = (trips, nonces, certificate)``. ``C`` accepts exactly when

1. every disputed receipt is a leaf of the witness and the audit test passes,
2. the Merkle commitment of the witness equals ``sigma``,
3. the query evaluated on the witness equals the claimed answer ``z``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .. import crypto, provider
from ..audits.ara import AraPublic, ara_test
from ..audits.rra import RraPublic, rra_test
from ..netmodel import Network, decode_trip, parse_network, validate_trip
from .queries import CannotVerify, canonical_json, eval_query, query_from_dict, query_to_dict

FAILURE_CLASSES = ("MalformedWitness", "RiderWitness", "AraTest", "RraTest", "CommitmentMismatch",
                   "CannotVerify", "AnswerMismatch")


@dataclass
class Witness:
    trips: list[bytes]
    nonces: list[bytes]
    certificate: dict | None = None

    def encode(self) -> bytes:
        def field(b: bytes) -> bytes:
            return len(b).to_bytes(4, "big") + b
        out = [len(self.trips).to_bytes(4, "big")]
        out += [field(t) + field(r) for t, r in zip(self.trips, self.nonces)]
        cert = b"" if self.certificate is None else canonical_json(self.certificate).encode()
        out.append(field(cert))
        return b"".join(out)

    @classmethod
    def decode(cls, data: bytes) -> "Witness":
        pos = 0

        def take(n):
            nonlocal pos
            if pos + n > len(data):
                raise ValueError("truncated witness")
            chunk = data[pos:pos + n]
            pos += n
            return chunk

        def field():
            return take(int.from_bytes(take(4), "big"))

        count = int.from_bytes(take(4), "big")
        trips, nonces = [], []
        for _ in range(count):
            trips.append(field())
            nonces.append(field())
        cert = field()
        if pos != len(data):
            raise ValueError("trailing bytes in witness")
        return cls(trips, nonces, json.loads(cert) if cert else None)


def _audit_to_dict(audit) -> dict:
    if isinstance(audit, AraPublic):
        return {"mode": "ara", "phi": audit.phi, "epsilon": audit.epsilon}
    return {"mode": "rra", "round_len": audit.round_len, "counts": [list(c) for c in audit.counts]}


def _audit_from_dict(d: dict):
    if d["mode"] == "ara":
        return AraPublic(int(d["phi"]), float(d["epsilon"]))
    return RraPublic(tuple(tuple(int(v) for v in c) for c in d["counts"]), int(d["round_len"]))


@dataclass(frozen=True)
class EvaluationCircuit:
    sigma: bytes
    audit: AraPublic | RraPublic
    disputes: tuple  # provider.Receipt
    query: object
    network: Network
    pk_mp: bytes

    def description(self) -> dict:
        return {
            "sigma": self.sigma.hex(),
            "audit": _audit_to_dict(self.audit),
            "disputes": [r.to_text() for r in self.disputes],
            "query": query_to_dict(self.query),
            "network": self.network.to_text(),
            "pk_mp": self.pk_mp.hex(),
        }

    @classmethod
    def from_description(cls, d: dict) -> "EvaluationCircuit":
        return cls(bytes.fromhex(d["sigma"]), _audit_from_dict(d["audit"]),
                   tuple(provider.Receipt.from_text(r) for r in d["disputes"]), query_from_dict(d["query"]),
                   parse_network(d["network"]), bytes.fromhex(d["pk_mp"]))

    def digest(self) -> bytes:
        return crypto.sha256(canonical_json(self.description()).encode())

    def diagnose(self, z, witness: Witness) -> str | None:
        """Failure class of the first failing check, or None when ``C`` accepts."""
        try:
            trips = [decode_trip(t) for t in witness.trips]
        except Exception:
            return "MalformedWitness"
        if len(witness.nonces) != len(trips) or any(validate_trip(t, self.network) for t in trips):
            return "MalformedWitness"
        # check 1: disputes resolvable, audit consistent
        leaves = {crypto.commit(r, t) for r, t in zip(witness.nonces, witness.trips)}
        for rc in self.disputes:
            if rc.verify(self.pk_mp) and rc.commitment not in leaves:
                return "RiderWitness"
        if isinstance(self.audit, AraPublic):
            if not ara_test(trips, self.audit.phi, self.audit.epsilon):
                return "AraTest"
        elif not rra_test(trips, self.audit):
            return "RraTest"
        # check 2: commitment
        try:
            root = crypto.dataset_root(witness.trips, witness.nonces)
        except ValueError:
            return "MalformedWitness"
        if root != self.sigma:
            return "CommitmentMismatch"
        # check 3: answer
        try:
            expected = eval_query(self.query, trips, self.network, witness.certificate, self.pk_mp)
        except CannotVerify:
            return "CannotVerify"
        except Exception:
            return "MalformedWitness"
        try:
            same = canonical_json(expected) == canonical_json(z)
        except (TypeError, ValueError):
            return "AnswerMismatch"
        return None if same else "AnswerMismatch"

    def evaluate(self, z, witness: Witness) -> bool:
        try:
            return self.diagnose(z, witness) is None
        except Exception:
            return False


def eval_circuit(circuit: EvaluationCircuit, z, witness: Witness) -> bool:
    return circuit.evaluate(z, witness)


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    failure_class: str | None = None
    fine: float = 0.0

    def __post_init__(self):
        if self.accepted and self.fine != 0:
            raise ValueError("an accepted answer carries no fine")

    def record(self) -> str:
        cls = self.failure_class or "-"
        return f"verdict accepted={str(self.accepted).lower()} fine={self.fine:g} class={cls}"
