"""Setup / prove / verify over the evaluation circuit.

Two backends:

``Transparent``
    The transcript carries the witness and verification re-runs the circuit.
    Useful for debugging (failures can be diagnosed) but reveals the data.
``OpaqueSealed``
    A verifier oracle trusted by both sides runs the circuit and returns only
    an accept bit, a hiding commitment to the witness, and a signature over
    ``(pp digest, z digest, accept bit, witness commitment)``. The transcript
    has constant size and contains no witness bytes. It stands in for a
    succinct zero-knowledge proof; a real backend can replace it behind the
    same interface.

Transcript file layout: ``b"PMMT"``, 4-byte backend id, 32-byte pp digest,
then the backend payload.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass

from . import crypto
from .authority.circuit import EvaluationCircuit, Witness
from .authority.queries import canonical_json

MAGIC = b"PMMT"
TRANSPARENT = "transparent"
OPAQUE = "opaque"
BACKEND_IDS = {TRANSPARENT: 1, OPAQUE: 2}
BACKEND_NAMES = {v: k for k, v in BACKEND_IDS.items()}


class TranscriptError(ValueError):
    pass


@dataclass(frozen=True)
class PublicParams:
    backend: str
    circuit_digest: bytes
    sigma: bytes
    query_digest: bytes
    audit_digest: bytes
    oracle_pk: bytes = b""

    def to_dict(self) -> dict:
        return {"backend": self.backend, "circuit": self.circuit_digest.hex(), "sigma": self.sigma.hex(),
                "query": self.query_digest.hex(), "audit": self.audit_digest.hex(),
                "oracle_pk": self.oracle_pk.hex()}

    @classmethod
    def from_dict(cls, d: dict) -> "PublicParams":
        return cls(d["backend"], bytes.fromhex(d["circuit"]), bytes.fromhex(d["sigma"]),
                   bytes.fromhex(d["query"]), bytes.fromhex(d["audit"]), bytes.fromhex(d["oracle_pk"]))

    def serialize(self) -> str:
        return canonical_json(self.to_dict())

    @classmethod
    def parse(cls, text: str) -> "PublicParams":
        return cls.from_dict(json.loads(text))

    def digest(self) -> bytes:
        return crypto.sha256(self.serialize().encode())


@dataclass(frozen=True)
class ProofTranscript:
    backend: str
    pp_digest: bytes
    payload: bytes

    def to_bytes(self) -> bytes:
        return MAGIC + BACKEND_IDS[self.backend].to_bytes(4, "big") + self.pp_digest + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProofTranscript":
        if len(data) < 40 or data[:4] != MAGIC:
            raise TranscriptError("not a proof transcript")
        bid = int.from_bytes(data[4:8], "big")
        if bid not in BACKEND_NAMES:
            raise TranscriptError(f"unknown backend id {bid}")
        return cls(BACKEND_NAMES[bid], data[8:40], data[40:])


def z_digest(z) -> bytes:
    return crypto.sha256(canonical_json(z).encode())


def _attestation_message(pp_digest: bytes, zd: bytes, accept: bool, wc: bytes) -> bytes:
    return b"pmm-attest" + pp_digest + zd + (b"\x01" if accept else b"\x00") + wc


class VerifierOracle:
    """Sealed evaluator trusted by both parties; holds the attestation key."""

    def __init__(self, rng: random.Random):
        self._keys = crypto.keygen(rng)
        self._rng = rng

    @property
    def public(self) -> bytes:
        return self._keys.public

    def attest(self, circuit: EvaluationCircuit, pp: PublicParams, z, witness: Witness) -> bytes:
        accept = circuit.evaluate(z, witness)
        wc = crypto.commit(crypto.new_nonce(self._rng), witness.encode())
        sig = crypto.sign(self._keys.secret, _attestation_message(pp.digest(), z_digest(z), accept, wc))
        return (b"\x01" if accept else b"\x00") + wc + sig

    def sign_raw(self, msg: bytes) -> bytes:
        return crypto.sign(self._keys.secret, msg)


class ProofSystem:
    """One instance per circuit. For the opaque backend, pass either the oracle
    (to prove and verify) or just its public key (to verify only)."""

    def __init__(self, backend: str = OPAQUE, oracle: VerifierOracle | None = None,
                 rng: random.Random | None = None, oracle_pk: bytes | None = None):
        if backend not in BACKEND_IDS:
            raise ValueError(f"unknown backend {backend!r}")
        if backend == OPAQUE and oracle is None and oracle_pk is None:
            oracle = VerifierOracle(rng or random.Random(0))
        self.backend = backend
        self.oracle = oracle
        self.oracle_pk = oracle.public if oracle is not None else (oracle_pk or b"")
        self.circuit: EvaluationCircuit | None = None

    def setup(self, circuit: EvaluationCircuit) -> PublicParams:
        if not isinstance(circuit, EvaluationCircuit):
            raise TypeError("setup needs an EvaluationCircuit")
        try:
            desc = circuit.description()
        except Exception as exc:
            raise ValueError(f"malformed circuit: {exc}") from None
        self.circuit = circuit
        audit = crypto.sha256(canonical_json(desc["audit"]).encode())
        query = crypto.sha256(canonical_json(desc["query"]).encode())
        opk = self.oracle_pk if self.backend == OPAQUE else b""
        return PublicParams(self.backend, circuit.digest(), circuit.sigma, query, audit, opk)

    def prove(self, pp: PublicParams, z, witness: Witness) -> ProofTranscript:
        if self.backend == TRANSPARENT:
            payload = canonical_json(z).encode()
            payload = len(payload).to_bytes(4, "big") + payload + witness.encode()
        else:
            if self.oracle is None:
                raise RuntimeError("proving needs the verifier oracle")
            payload = z_digest(z) + self.oracle.attest(self.circuit, pp, z, witness)
        return ProofTranscript(self.backend, pp.digest(), payload)

    def verify(self, pp: PublicParams, z, transcript: ProofTranscript) -> bool:
        try:
            return self._verify(pp, z, transcript)
        except Exception:
            return False

    def _verify(self, pp: PublicParams, z, transcript: ProofTranscript) -> bool:
        if transcript.backend != pp.backend or pp.backend != self.backend:
            return False
        if transcript.pp_digest != pp.digest() or self.circuit is None:
            return False
        if pp.circuit_digest != self.circuit.digest() or pp.sigma != self.circuit.sigma:
            return False
        if self.backend == TRANSPARENT:
            data = transcript.payload
            n = int.from_bytes(data[:4], "big")
            if json.loads(data[4:4 + n]) != json.loads(canonical_json(z)):
                return False
            return self.circuit.evaluate(z, Witness.decode(data[4 + n:]))
        if pp.oracle_pk != self.oracle_pk:
            return False
        data = transcript.payload
        if len(data) != 32 + 1 + 32 + 64:
            return False
        zd, accept, wc, sig = data[:32], data[32], data[33:65], data[65:]
        if zd != z_digest(z) or accept not in (0, 1):
            return False
        msg = _attestation_message(pp.digest(), zd, accept == 1, wc)
        if not crypto.verify_sig(self.oracle_pk, msg, sig):
            return False
        return accept == 1

    def diagnose(self, z, transcript: ProofTranscript) -> str | None:
        """Failure class, only available from the transparent backend."""
        if self.backend != TRANSPARENT or self.circuit is None:
            return None
        data = transcript.payload
        n = int.from_bytes(data[:4], "big")
        try:
            w = Witness.decode(data[4 + n:])
        except ValueError:
            return "MalformedWitness"
        return self.circuit.diagnose(z, w)


def setup(circuit: EvaluationCircuit, backend: str = OPAQUE, rng: random.Random | None = None
          ) -> tuple[ProofSystem, PublicParams]:
    ps = ProofSystem(backend, rng=rng)
    return ps, ps.setup(circuit)
