"""Run a scenario through the whole protocol and report what happened.

Stages:

0. the provider serves requests, hands each rider a signed receipt over the
   rider's nonce, and publishes the root ``sigma``; riders check inclusion
   and dispute with the authority when the provider cannot prove it
1. rider-witness resolution and the roadside audit (ARA or RRA)
2. the authority announces each query
3. it builds the evaluation circuit and runs setup
4. the provider answers
5. the provider proves
6. the authority verifies and levies fines

Every inter-agent message goes through an :class:`EventBus`; the privacy and
sensor-lifecycle checks in the report are assertions over that log.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from dataclasses import dataclass, field, replace

from .. import crypto, proofsys
from .. import provider as mpmod
from ..audits import (AraPublic, Party, RiderReport, Signal, ara_run, check_lifecycle, make_ara_sensors,
                      make_rra_sensors, rider_check, rider_witness_test, rra_run)
from ..authority import EvaluationCircuit, Verdict, Witness, levy_fine
from ..authority.queries import QueryRejected, canonical_json, query_id
from ..netmodel import TripRecord, Vehicle, encode_trip
from .events import MA, MP, EventBus
from .scenario import Scenario, ScenarioError, default_queries

# Message kinds the authority may receive. Everything else reaching MA is a
# privacy violation.
MA_SANCTIONED = frozenset({
    "sigma",           # root of the committed dataset
    "dispute",         # receipt (+ rider nonce) of a rider who got no proof
    "merkle_proof",    # provider's inclusion proof for a disputed receipt
    "refusal",
    "coin_commit",     # ARA leader election
    "coin_reveal",
    "ara_phi",         # signed aggregate and leader id
    "rra_count",       # signed per-(round, edge) counts
    "query_rejected",
    "answer",          # z
    "transcript",
})
WINDOW = 16  # a trip-encoding window this long in MA's inbox counts as a leak


def sub_rng(seed: int, label: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{label}".encode()).digest()
    return random.Random(int.from_bytes(digest, "big"))


def _rider(trip_id: str) -> str:
    return f"rider:{trip_id}"


# --------------------------------------------------------------------------
# Strategy materialization


def _convert(current, raw: str):
    if isinstance(current, bool):
        raise ValueError("boolean fields cannot be edited")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, str):
        return raw
    raise ValueError("only scalar fields can be edited")


def build_strategy(sc: Scenario, trips: list[TripRecord], secret: bytes):
    spec = sc.strategy
    ids = {t.trip_id: t for t in trips}

    def need(tid):
        if tid not in ids:
            raise ScenarioError(f"no served trip {tid!r} (served: {len(ids)})", spec.line, "strategy")
        return ids[tid]

    if spec.kind == "honest":
        return mpmod.Honest()
    if spec.kind == "omit":
        for tid in spec.args:
            need(tid)
        return mpmod.OmitTrips(frozenset(spec.args))
    if spec.kind == "tamper":
        tid, edits = spec.args
        trip = need(tid)
        out = []
        for name, raw in edits:
            if name not in TripRecord.__dataclass_fields__ or name == "trip_id":
                raise ScenarioError(f"cannot tamper with field {name!r}", spec.line, "strategy")
            try:
                out.append((name, _convert(getattr(trip, name), raw)))
            except ValueError as exc:
                raise ScenarioError(str(exc), spec.line, name) from None
        return mpmod.TamperTrip(tid, tuple(out))
    if spec.kind == "misreport":
        tid, shift, resign = spec.args
        trip = need(tid)
        if trip.pickup_time <= trip.match_time:
            raise ScenarioError(f"trip {tid} has no Period 2 to misreport", spec.line, "strategy")
        return mpmod.MisreportPeriod(tid, shift, resign, sc.pricing.alpha)
    # inject
    vehicles = {v.vehicle_id: v for v, _ in sc.fleet}
    fakes = []
    for k, (path, t, vid, line) in enumerate(spec.args):
        vehicle = vehicles.get(vid) if vid else sc.fleet[0][0]
        if vehicle is None:
            vehicle = Vehicle(vid)
        try:
            fakes.append(mpmod.fabricate_trip(sc.network, f"fake-{k:04d}", path, t, vehicle, sc.pricing, secret))
        except ValueError as exc:
            raise ScenarioError(str(exc), line, "inject") from None
    return mpmod.InjectTrips(tuple(fakes))


# --------------------------------------------------------------------------
# Report


@dataclass
class QueryOutcome:
    kind: str
    query: str
    z: object
    verdict: Verdict
    circuit: dict | None = None
    pp: str | None = None
    transcript: bytes = b""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "query": self.query, "z": self.z, "accepted": self.verdict.accepted,
                "fine": self.verdict.fine, "record": self.verdict.record()}


@dataclass
class RunReport:
    scenario: str
    seed: int
    backend: str
    sigma: str
    served: int
    unserved: int
    committed: int
    audit: dict
    rider_witness: dict
    queries: list[QueryOutcome]
    detections: list[str]
    fines: dict
    privacy: dict
    lifecycle: dict
    events: list[str]
    event_digest: str
    timing: dict = field(default_factory=dict)
    oracle_pk: str = ""

    @property
    def detected(self) -> bool:
        return bool(self.detections)

    @property
    def total_fine(self) -> float:
        return self.fines["total"]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "seed": self.seed, "backend": self.backend, "sigma": self.sigma,
            "served": self.served, "unserved": self.unserved, "committed": self.committed,
            "audit": self.audit, "rider_witness": self.rider_witness,
            "queries": [q.to_dict() for q in self.queries], "detections": self.detections,
            "fines": self.fines, "privacy": self.privacy, "lifecycle": self.lifecycle,
            "events": {"count": len(self.events), "digest": self.event_digest, "log": self.events},
        }

    def to_json(self) -> str:
        """Byte-stable rendering; wall-clock timing is deliberately left out."""
        return canonical_json(self.to_dict()) + "\n"


def privacy_scan(bus: EventBus, trips: list[TripRecord], backend: str) -> dict:
    """What MA received, and whether any of it carries trip plaintext."""
    inbox = bus.received_by(MA)
    kinds = sorted({e.kind for e in inbox})
    unsanctioned = sorted(k for k in kinds if k not in MA_SANCTIONED)
    seen = set()
    for e in inbox:
        p = e.payload
        seen.update(p[i:i + WINDOW] for i in range(len(p) - WINDOW + 1))
    leaks = set()
    for t in trips:
        enc = encode_trip(t)
        if len(enc) < WINDOW:
            continue
        if any(enc[i:i + WINDOW] in seen for i in range(len(enc) - WINDOW + 1)):
            leaks.add(t.trip_id)
    return {"backend": backend, "ma_kinds": kinds, "unsanctioned": unsanctioned,
            "plaintext_leaks": sorted(leaks), "ok": not unsanctioned and not leaks}


# --------------------------------------------------------------------------
# The protocol


def run(sc: Scenario, seed: int | None = None, backend: str = proofsys.OPAQUE, queries=None) -> RunReport:
    seed = sc.seed if seed is None else seed
    timing = {}
    clock = time.perf_counter()
    bus = EventBus()
    keys_mp = crypto.keygen(sub_rng(seed, "mp-keys"))
    keys_ma = crypto.keygen(sub_rng(seed, "ma-keys"))
    rider_rng = sub_rng(seed, "riders")
    commit_rng = sub_rng(seed, "commit")

    # Stage 0: serve, receipts, commitment
    requests = list(sc.requests)
    demand_rng = sub_rng(seed, "demand")
    for g, gen in enumerate(sc.generators):
        requests += gen.requests(sc.network.n, demand_rng, f"g{g}-")
    fleet = [mpmod.FleetVehicle(v, at) for v, at in sc.fleet]
    trips, unserved = mpmod.serve_and_record(requests, sc.network, fleet, sc.pricing, keys_mp.secret)
    state = mpmod.ProviderState(keys_mp, sc.network, trips)
    state.strategy = build_strategy(sc, trips, keys_mp.secret)

    receipts: dict[str, tuple[mpmod.Receipt, bytes]] = {}
    for t in trips:
        nonce = crypto.new_nonce(rider_rng)
        bus.send(_rider(t.trip_id), MP, "rider_nonce", nonce)
        rc = mpmod.issue_receipt(state, t.trip_id, nonce)
        bus.send(MP, _rider(t.trip_id), "receipt", rc.to_text().encode())
        receipts[t.trip_id] = (rc, nonce)
    sigma = mpmod.commit_demand(state, commit_rng)
    bus.send(MP, MA, "sigma", sigma)
    timing["stage0"] = time.perf_counter() - clock

    # Riders check inclusion; failures become disputes
    for tid in sc.false_disputes:
        if tid not in receipts:
            raise ScenarioError(f"no served trip {tid!r} to dispute", sc.disputes_line, "dispute")
    disputes: list[RiderReport] = []
    if sc.riders_report:
        for tid, (rc, nonce) in receipts.items():
            bus.send(_rider(tid), MP, "proof_request", rc.to_text().encode())
            proof = mpmod.respond_merkle_request(state, rc)
            kind = "merkle_proof" if isinstance(proof, crypto.MerkleProof) else "refusal"
            bus.send(MP, _rider(tid), kind, proof.serialize().encode() if kind == "merkle_proof" else proof.reason.encode())
            if not rider_check(rc, sigma, proof) or tid in sc.false_disputes:
                bus.send(_rider(tid), MA, "dispute", (rc.to_text() + " nonce=" + nonce.hex()).encode())
                disputes.append(RiderReport(rc, nonce))

    # Stage 1: rider witness resolution, roadside audit
    clock = time.perf_counter()

    def ask(rc):
        bus.send(MA, MP, "proof_request", rc.to_text().encode())
        ans = mpmod.respond_merkle_request(state, rc)
        if isinstance(ans, crypto.MerkleProof):
            bus.send(MP, MA, "merkle_proof", ans.serialize().encode())
        else:
            bus.send(MP, MA, "refusal", ans.reason.encode())
        return ans

    rw = rider_witness_test(disputes, ask, sigma, keys_mp.public)
    audit, audit_public, p_detect = _audit(sc, seed, trips, keys_ma, keys_mp, bus)
    timing["stage1"] = time.perf_counter() - clock

    # Stages 2-6 per query
    clock = time.perf_counter()
    oracle = proofsys.VerifierOracle(sub_rng(seed, "oracle")) if backend == proofsys.OPAQUE else None
    qs = queries if queries is not None else (sc.queries if sc.queries is not None
                                              else default_queries(sc.network, sc.pricing))
    dispute_receipts = tuple(r.receipt for r in disputes)
    outcomes = [_query_round(q, state, sigma, audit_public, dispute_receipts, sc, backend, oracle, bus)
                for q in qs]
    timing["stages2_6"] = time.perf_counter() - clock

    # Fines: one penalty per detected misreport event
    detections = []
    fines = {"rider_witness": 0.0, "verification": 0.0}
    policy = sc.fines
    if not rw.passed:
        detections.append("RiderWitness")
        fines["rider_witness"] = levy_fine("RiderWitness", policy) * len(rw.evidence)
    rejected = [o for o in outcomes if not o.verdict.accepted and o.verdict.failure_class != "QueryRejected"]
    if rejected:
        detections.append("VerificationFailed")
        if rw.passed:
            fine = levy_fine("RRA", policy, p_detect)
            fines["verification"] = fine
            rejected[0].verdict = replace(rejected[0].verdict, fine=fine)
    fines["total"] = fines["rider_witness"] + fines["verification"]
    for tid in (rc.trip_id for rc in rw.evidence):
        bus.send(MA, _rider(tid), "fine_paid", f"{policy.rider:g}".encode())

    ground = trips + [t for t in state.committed if t.trip_id not in receipts]
    privacy = privacy_scan(bus, ground, backend)
    lifecycle = check_lifecycle(bus.events)
    return RunReport(
        scenario=sc.name, seed=seed, backend=backend, sigma=sigma.hex(), served=len(trips),
        unserved=len(unserved), committed=len(state.committed), audit=audit,
        rider_witness={"reports": len(disputes), "passed": rw.passed,
                       "evidence": [rc.trip_id for rc in rw.evidence],
                       "discarded": [rc.trip_id for rc in rw.discarded]},
        queries=outcomes, detections=detections, fines=fines, privacy=privacy,
        lifecycle={"violations": lifecycle, "ok": not lifecycle},
        events=[f"{e.line()} {hashlib.sha256(e.payload).hexdigest()[:16]}" for e in bus.events],
        event_digest=bus.digest(), timing=timing,
        oracle_pk=oracle.public.hex() if oracle is not None else "")


def _audit(sc: Scenario, seed: int, trips, keys_ma, keys_mp, bus):
    a = sc.audit
    rng = sub_rng(seed, "audit")
    if a.mode == "ara":
        sensors = make_ara_sensors(sc.network.m, rng, bus)
        agg = ara_run(sensors, trips, Party(MA, keys_ma), Party(MP, keys_mp), rng, bus, a.gps_drop)
        return ({"mode": "ara", "phi": agg.phi, "epsilon": a.epsilon, "leader": agg.leader},
                AraPublic(agg.phi, a.epsilon), 1.0)
    rounds = a.rounds or math.ceil(sc.network.horizon / a.round_len)
    sample_seed = hashlib.sha256(f"{seed}:rra-sample".encode()).digest()
    sensors = make_rra_sensors(sc.network.m, a.p, rng, bus, a.round_len)
    relayed = [(r, Signal(vid, 3, t, e, t)) for r, e, t, vid in a.relays]
    res = rra_run(sensors, trips, rounds, sample_seed, sc.network.m, a.p, keys_ma.public, keys_mp.public,
                  rng, bus, a.gps_drop, relayed)
    public = res.public(a.round_len)
    summary = {"mode": "rra", "p": a.p, "round_len": a.round_len, "rounds": rounds,
               "sensors": len(sensors), "records": len(res.records),
               "audited_total": sum(c for _, _, c in public.counts),
               "relay_rejected": len(res.rejected)}
    return summary, public, a.p


def _query_round(q, state, sigma, audit_public, disputes, sc, backend, oracle, bus) -> QueryOutcome:
    qid = query_id(q)
    bus.send(MA, MP, "query", qid.encode())
    try:
        ans = mpmod.answer_query(state, q)
    except QueryRejected as exc:
        bus.send(MP, MA, "query_rejected", str(exc).encode())
        return QueryOutcome(q.kind, qid, None, Verdict(False, "QueryRejected"))
    circuit = EvaluationCircuit(sigma, audit_public, disputes, q, sc.network, state.pk)
    ps = proofsys.ProofSystem(backend, oracle)
    pp = ps.setup(circuit)
    bus.send(MA, MP, "pp", pp.serialize().encode())
    bus.send(MP, MA, "answer", canonical_json(ans.z).encode())
    witness = Witness(ans.trips, ans.nonces, ans.certificate)
    transcript = ps.prove(pp, ans.z, witness)
    raw = transcript.to_bytes()
    bus.send(MP, MA, "transcript", raw)
    ok = ps.verify(pp, ans.z, proofsys.ProofTranscript.from_bytes(raw))
    cls = None if ok else (ps.diagnose(ans.z, transcript) or "Rejected")
    return QueryOutcome(q.kind, qid, ans.z, Verdict(ok, cls), circuit.description(), pp.serialize(), raw)


# --------------------------------------------------------------------------
# Batches


@dataclass
class BatchStats:
    scenario: str
    runs: int
    detections: int
    mean_fine: float
    frequency: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "runs": self.runs, "detections": self.detections,
                "frequency": self.frequency, "ci95": [self.ci_low, self.ci_high], "mean_fine": self.mean_fine}


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    ph = k / n
    den = 1 + z * z / n
    mid = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return max(0.0, mid - half), min(1.0, mid + half)


def batch(sc: Scenario, n_seeds: int, backend: str = proofsys.OPAQUE, first_seed: int = 0,
          queries=None) -> BatchStats:
    """Run seeds ``first_seed .. first_seed + n_seeds - 1`` and aggregate detections."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    detected, fines = 0, 0.0
    for s in range(first_seed, first_seed + n_seeds):
        rep = run(sc, s, backend, queries)
        detected += rep.detected
        fines += rep.total_fine
    lo, hi = wilson_interval(detected, n_seeds)
    return BatchStats(sc.name, n_seeds, detected, fines / n_seeds, detected / n_seeds, lo, hi)
