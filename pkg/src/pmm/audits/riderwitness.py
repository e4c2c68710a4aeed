"""Rider witness: riders holding signed receipts expose omitted or altered trips."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .. import crypto, provider as mp


@dataclass(frozen=True)
class RiderReport:
    """A rider's dispute. Only the receipt and nonce go to the authority; the
    trip encoding stays with the rider."""

    receipt: "mp.Receipt"
    rider_nonce: bytes
    trip_encoding: bytes | None = field(default=None, repr=False)


@dataclass
class RiderWitnessResult:
    passed: bool
    evidence: list = field(default_factory=list)  # receipts
    discarded: list = field(default_factory=list)
    proofs: dict[str, crypto.MerkleProof] = field(default_factory=dict)


ProofOracle = Callable[["mp.Receipt"], object]


def rider_witness_test(reports: Sequence[RiderReport], provider: "mp.ProviderState | ProofOracle",
                       sigma: bytes, pk_mp: bytes) -> RiderWitnessResult:
    """Ask the provider to prove inclusion of each genuinely signed receipt.

    ``provider`` is either the provider state or any callable answering proof
    requests. Fails when a valid receipt is refused or its proof does not
    verify against ``sigma``; receipts with bad signatures are discarded.
    """
    ask = provider if callable(provider) else (lambda r: mp.respond_merkle_request(provider, r))
    res = RiderWitnessResult(True)
    for rep in reports:
        rc = rep.receipt
        if not rc.verify(pk_mp):
            res.discarded.append(rc)
            continue
        answer = ask(rc)
        if isinstance(answer, crypto.MerkleProof) and crypto.merkle_verify_commitment(sigma, rc.commitment, answer):
            res.proofs[rc.trip_id] = answer
            continue
        res.passed = False
        res.evidence.append(rc)
    return res


def rider_check(receipt: "mp.Receipt", sigma: bytes, proof) -> bool:
    """The rider's own check of the proof the provider hands back."""
    return isinstance(proof, crypto.MerkleProof) and crypto.merkle_verify_commitment(sigma, receipt.commitment, proof)
