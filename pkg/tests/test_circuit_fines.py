import math

import pytest

from pmm import provider as mp
from pmm.audits import AraPublic, RraPublic, phi_rounds, phi_total
from pmm.authority.circuit import EvaluationCircuit, Verdict, Witness
from pmm.authority.fines import (FinePolicy, fine_margin_for_confidence, fine_threshold, levy_fine,
                                 simulate_dishonest_utility)
from pmm.authority.queries import TripCount, Wage
from pmm.netmodel import encode_trip

from conftest import served_state


def circuit_for(state, truth, query=TripCount(), disputes=(), audit=None):
    audit = audit or AraPublic(phi_total(truth))
    return EvaluationCircuit(state.sigma, audit, tuple(disputes), query, state.network, state.pk)


def witness_of(state):
    return Witness([encode_trip(t) for t in state.committed], list(state.committed_nonces))


def test_honest_circuit_accepts(ring4):
    state, _, _ = served_state(ring4, 8, seed=1)
    c = circuit_for(state, state.trips)
    w = witness_of(state)
    assert c.evaluate(8, w) and c.diagnose(8, w) is None
    assert c.diagnose(9, w) == "AnswerMismatch"
    assert not c.evaluate(9, w)
    assert circuit_for(state, state.trips, Wage()).evaluate(1, w)


def test_removing_a_trip_breaks_the_commitment(ring4):
    state, _, _ = served_state(ring4, 8, seed=2)
    c = circuit_for(state, state.trips, audit=AraPublic(phi_total(state.trips), 1.0))
    w = witness_of(state)
    short = Witness(w.trips[1:], w.nonces[1:])
    assert c.diagnose(7, short) == "CommitmentMismatch"
    assert not c.evaluate(8, short)


def test_disputed_receipt_must_be_in_witness(ring4):
    state, receipts, _ = served_state(ring4, 6, seed=3, strategy=mp.OmitTrips(frozenset({"trip-0001"})))
    c = circuit_for(state, state.trips, disputes=[receipts["trip-0001"]],
                    audit=AraPublic(phi_total(state.committed)))
    assert c.diagnose(5, witness_of(state)) == "RiderWitness"


def test_audit_checks(ring4):
    state, _, _ = served_state(ring4, 6, seed=4)
    w = witness_of(state)
    assert circuit_for(state, state.trips, audit=AraPublic(phi_total(state.trips) + 1)).diagnose(6, w) == "AraTest"
    rounds = phi_rounds(state.trips, 4)
    (r, e), cnt = sorted(rounds.items())[0]
    ok = RraPublic(((r, e, cnt),), 4)
    bad = RraPublic(((r, e, cnt + 1),), 4)
    assert circuit_for(state, state.trips, audit=ok).diagnose(6, w) is None
    assert circuit_for(state, state.trips, audit=bad).diagnose(6, w) == "RraTest"


def test_malformed_witness(ring4):
    state, _, _ = served_state(ring4, 4, seed=5)
    c = circuit_for(state, state.trips)
    w = witness_of(state)
    assert c.diagnose(4, Witness([b"junk"] + w.trips[1:], w.nonces)) == "MalformedWitness"
    assert c.diagnose(4, Witness(w.trips, w.nonces[:-1])) == "MalformedWitness"
    assert Witness.decode(w.encode()) == w
    with pytest.raises(ValueError):
        Witness.decode(w.encode()[:-1])


def test_circuit_description_round_trip(ring4):
    state, receipts, _ = served_state(ring4, 4, seed=6)
    c = circuit_for(state, state.trips, disputes=[receipts["trip-0000"]],
                    audit=RraPublic(((0, 1, 2), (3, 4, 0)), 5))
    again = EvaluationCircuit.from_description(c.description())
    assert again == c and again.digest() == c.digest()


def test_verdict_record():
    assert Verdict(True).record() == "verdict accepted=true fine=0 class=-"
    assert Verdict(False, "RiderWitness", 100.0).record() == "verdict accepted=false fine=100 class=RiderWitness"
    with pytest.raises(ValueError):
        Verdict(True, None, 5.0)


# -- fines -----------------------------------------------------------------

def test_levy_fine_worked_example():
    policy = FinePolicy(rider=100.0, floor=10.0, u_honest=80.0, u_dishonest=100.0, margin=1.0)
    assert fine_threshold(100.0, 80.0, 0.1) == pytest.approx(100.0)
    assert levy_fine("RRA", policy, 0.1) == pytest.approx(101.0)
    assert levy_fine("RRA", policy, 1.0) == 10.0  # threshold -80 falls below the floor
    assert levy_fine("RiderWitness", policy) == 100.0
    assert levy_fine("none", policy) == 0.0
    with pytest.raises(ValueError):
        levy_fine("bribe", policy)
    with pytest.raises(ValueError):
        fine_threshold(1.0, 0.0, 0.0)


@pytest.mark.parametrize("u_d,u_h,p", [(100, 80, 0.1), (50, 10, 0.3), (10, 9, 0.5), (200, 0, 0.05)])
def test_fine_makes_cheating_unprofitable(u_d, u_h, p):
    f = levy_fine("RRA", FinePolicy(u_honest=u_h, u_dishonest=u_d, floor=0.0, margin=0.5), p)
    assert f > (u_d - u_h) / p - u_d
    assert (1 - p) * u_d - p * f < u_h


def test_confidence_margin():
    assert fine_margin_for_confidence(20.0, 0.1, 2000) > 0
    assert math.isinf(fine_margin_for_confidence(20.0, 0.001, 10))


def test_simulated_detection_frequency():
    seeds = range(2000)
    util, freq = simulate_dishonest_utility(0.0, 100.0, 0.3, seeds)
    assert abs(freq - 0.3) <= 4 * math.sqrt(0.3 * 0.7 / 2000)
    assert util == pytest.approx((1 - freq) * 100.0)
