"""Acceptance gate: one test per criterion, each printing a pass/fail line.

The lines are echoed to stdout (visible with ``-s``) and collected into the
terminal summary.
"""

import hashlib
import itertools
import math
import random
import time
from dataclasses import replace

import numpy as np
import pytest

from pmm import crypto
from pmm import provider as mp
from pmm.audits import (Party, RiderReport, ara_run, ara_test, make_ara_sensors, phi_total, rider_check,
                        rider_witness_test)
from pmm.authority.fines import (FinePolicy, fine_margin_for_confidence, fine_threshold, levy_fine,
                                 simulate_dishonest_utility)
from pmm.authority.queries import ADMISSIBLE, TripCount
from pmm.flowopt import (MpObjective, check_kkt, compute_tolls, solve_mp_routing, solve_social_optimum_tt,
                         solve_timevarying_routing)
from pmm.flowopt.social import path_costs, shortest_potentials
from pmm.harness.cli import bundled_scenarios, main, resolve_scenario
from pmm.harness.events import MA, MP
from pmm.harness.run import MA_SANCTIONED, batch, run
from pmm.harness.scenario import AuditSpec, default_queries
from pmm.netmodel import Vehicle
from pmm.proofsys import OPAQUE, TRANSPARENT

from conftest import ACCEPTANCE, pigou, ring, served_state
from oracles import random_demand, random_network, steady_min_cost, timevarying_optimum
from test_flowopt import perturbed_flows


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


# 1 ------------------------------------------------------------------------

def test_criterion_01_merkle_completeness_and_binding():
    start = time.perf_counter()
    rng = random.Random(2024)
    trees = {}
    for t in range(1, 65):
        items = [rng.randbytes(rng.randrange(1, 48)) for _ in range(t)]
        rs = [crypto.new_nonce(rng) for _ in range(t)]
        trees[t] = (items, rs, crypto.mcommit(items, rs))
    complete = too_long = 0
    for _ in range(10_000):
        t = rng.randint(1, 64)
        items, rs, tree = trees[t]
        i = rng.randrange(t)
        proof = crypto.merkle_prove(tree, i)
        too_long += len(proof.siblings) > math.ceil(math.log2(t))
        complete += crypto.merkle_verify(tree.root, items[i], rs[i], proof)
    forged_ok = 0
    for k in range(10_000):
        t = rng.randint(1, 64)
        items, rs, tree = trees[t]
        i = rng.randrange(t)
        proof = crypto.merkle_prove(tree, i)
        item, nonce, sibs = items[i], rs[i], list(proof.siblings)
        kind = k % 4 if sibs else k % 2
        if kind == 0:
            item = item + b"\x00"
        elif kind == 1:
            nonce = bytes([nonce[0] ^ 1]) + nonce[1:]
        elif kind == 2:
            s = rng.randrange(len(sibs))
            h, side = sibs[s]
            b = rng.randrange(256)
            sibs[s] = (h[:b // 8] + bytes([h[b // 8] ^ (1 << (b % 8))]) + h[b // 8 + 1:], side)
        else:
            sibs.pop(rng.randrange(len(sibs)))
        forged_ok += crypto.merkle_verify(tree.root, item, nonce, crypto.MerkleProof(proof.leaf_index, tuple(sibs)))
    elapsed = time.perf_counter() - start
    ok = complete == 10_000 and forged_ok == 0 and too_long == 0 and elapsed < 10
    report(1, ok, f"verified {complete}/10000, forgeries accepted {forged_ok}/10000, "
                  f"over-long proofs {too_long}, {elapsed:.1f}s (< 10s)")


# 2 ------------------------------------------------------------------------

TAMPER_FIELDS = [("trip_fare", lambda t: t.trip_fare + 0.5), ("driver_wage", lambda t: t.driver_wage - 1.0),
                 ("dropoff_time", lambda t: t.dropoff_time + 1), ("request_time", lambda t: t.request_time + 1),
                 ("vehicle", lambda t: Vehicle("v-other", t.vehicle.make_model, t.vehicle.emission_rate))]


def omit_and_tamper_matrix(trips, rng):
    ids = [t.trip_id for t in trips]
    for tid in ids:
        yield mp.OmitTrips(frozenset({tid}))
    for size in (2, 3, len(ids) // 2, len(ids)):
        if 1 <= size <= len(ids):
            yield mp.OmitTrips(frozenset(rng.sample(ids, size)))
    for t in trips:
        for name, change in TAMPER_FIELDS:
            yield mp.TamperTrip(t.trip_id, ((name, change(t)),))


def test_criterion_02_rider_witness_exhaustive():
    start = time.perf_counter()
    cases = caught = 0
    net = ring(6, two_way=True, horizon=400)
    for size in (1, 2, 5, 12, 30, 50):
        base, receipts, rng = served_state(net, size, seed=size)
        for strategy in omit_and_tamper_matrix(base.trips, rng):
            state = mp.ProviderState(base.keypair, net, base.trips, strategy, dict(base.nonces))
            mp.commit_demand(state, rng)
            reports = []
            for t in base.trips:
                rc = receipts[t.trip_id]
                if not rider_check(rc, state.sigma, mp.respond_merkle_request(state, rc)):
                    reports.append(RiderReport(rc, base.nonces[t.trip_id]))
            res = rider_witness_test(reports, state, state.sigma, state.pk)
            cases += 1
            caught += not res.passed
    elapsed = time.perf_counter() - start
    ok = cases > 0 and caught == cases and elapsed < 30
    report(2, ok, f"rider witness detected {caught}/{cases} omit/tamper variants "
                  f"(|trips| <= 50), {elapsed:.1f}s (< 30s)")


# 3 ------------------------------------------------------------------------

def test_criterion_03_aggregate_audit_exhaustive():
    start = time.perf_counter()
    net = ring(4, two_way=True, horizon=200)
    honest_pass = honest_runs = caught = variants = 0
    fig3_delta = None
    fakes_vehicle = Vehicle("v-fake", "sedan", 1.0)
    for seed in range(5):
        state, _, rng = served_state(net, 10, seed=100 + seed)
        agg = ara_run(make_ara_sensors(net.m, rng), state.trips, Party(MA, crypto.keygen(rng)),
                      Party(MP, crypto.keygen(rng)), rng)
        honest_runs += 1
        honest_pass += ara_test(state.trips, agg.phi, 0.0)
        if seed == 0:
            square = mp.fabricate_trip(net, "fake-fig", [0, 1, 2, 3], 150, fakes_vehicle)
            fig3_delta = phi_total(state.trips + [square]) - agg.phi
        paths = [[e] for e in range(net.m)]
        for start_edge in range(net.m):
            path, node = [], net.edges[start_edge].src
            for _ in range(4):
                e = next(e for e in net.out_edges[node] if e < 4) if path else start_edge
                path.append(e)
                node = net.edges[e].dst
                paths.append(list(path))
        for k, path in enumerate(paths):
            fake = mp.fabricate_trip(net, f"fake-{k:04d}", path, 150, fakes_vehicle)
            committed = mp.InjectTrips((fake,)).apply(state.trips, state.keypair.secret)
            variants += 1
            caught += not ara_test(committed, agg.phi, 0.0)
        two = [mp.fabricate_trip(net, f"fake-x{j}", [j], 160 + j, fakes_vehicle) for j in range(2)]
        variants += 1
        caught += not ara_test(state.trips + two, agg.phi, 0.0)
    fig = run(resolve_scenario("fig3"))
    fig_state_phi = fig.audit["phi"]
    sc = resolve_scenario("fig3")
    honest_sc = replace(sc, strategy=replace(sc.strategy, kind="honest", args={}))
    honest_phi = run(honest_sc).audit["phi"]
    fig_rejected = fig.detections == ["VerificationFailed"] and fig_state_phi == honest_phi
    elapsed = time.perf_counter() - start
    ok = (honest_pass == honest_runs and caught == variants and fig3_delta == 4 and fig_rejected
          and elapsed < 30)
    report(3, ok, f"honest runs passed {honest_pass}/{honest_runs}, inject variants caught {caught}/{variants}, "
                  f"4-edge fake adds {fig3_delta} to phi, fig3 scenario rejected={fig_rejected}, "
                  f"{elapsed:.1f}s (< 30s)")


# 4 ------------------------------------------------------------------------

def test_criterion_04_randomized_audit_statistics():
    start = time.perf_counter()
    base = resolve_scenario("inject_fake_trip_rra")
    lines, ok = [], True
    for p in (0.1, 0.3, 0.5):
        sc = replace(base, audit=AuditSpec(mode="rra", p=p, round_len=base.audit.round_len))
        stats = batch(sc, 2000, queries=[TripCount()])
        band = 4 * math.sqrt(p * (1 - p) / 2000)
        inside = abs(stats.frequency - p) <= band
        ok &= inside
        lines.append(f"p={p}: {stats.frequency:.4f} in [{p - band:.4f}, {p + band:.4f}]")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 300
    report(4, ok, "; ".join(lines) + f", {elapsed:.0f}s (< 300s)")


# 5 ------------------------------------------------------------------------

def test_criterion_05_congestion_pricing():
    net = pigou()
    demand = np.array([[0.0, 1.0], [0.0, 0.0]])
    so = solve_social_optimum_tt(net, demand)
    tolls = compute_tolls(net, so.x)
    c0, c1 = path_costs(net, so.x, [(0,), (1,)], tolls)
    pigou_ok = (abs(so.x[1] - 0.5) <= 1e-4 and abs(tolls[0]) <= 1e-4 and abs(tolls[1] - 0.5) <= 1e-4
                and abs(c0 - c1) <= 1e-4)
    accepted = rejected = 0
    for k in range(20):
        rng = random.Random(500 + k)
        n = rng.randint(3, 6)
        g = random_network(rng, n, n, lengths=False, slopes=True, two_way=True)
        d = random_demand(rng, n, rng.randint(1, 4)).astype(float)
        sol = solve_social_optimum_tt(g, d)
        accepted += check_kkt(g, d, sol.certificate.flows, sol.certificate.potentials).feasible
        flows = perturbed_flows(g, d, sol)
        if flows is not None:
            rejected += not check_kkt(g, d, flows, shortest_potentials(g, flows)).feasible
    ok = pigou_ok and accepted == 20 and rejected == 20
    report(5, ok, f"Pigou x2={so.x[1]:.6f} tolls=({tolls[0]:.6f}, {tolls[1]:.6f}) path costs "
                  f"{c0:.6f}/{c1:.6f}; KKT accepted {accepted}/20 solver outputs, rejected {rejected}/20 "
                  f"5%-perturbed flows")


# 6 ------------------------------------------------------------------------

def test_criterion_06_flow_solver_oracles():
    start = time.perf_counter()
    steady_ok = tv_ok = 0
    worst = 0.0
    for k in range(50):
        rng = random.Random(600 + k)
        n = rng.randint(2, 6)
        g = random_network(rng, n, rng.randint(0, 2 * n))
        d = random_demand(rng, n, rng.randint(1, 6))
        obj = MpObjective(fare=rng.uniform(1.0, 5.0), cost_per_length=rng.uniform(0.5, 2.0))
        got = solve_mp_routing(g, d, obj).objective
        want = obj.fare * d.sum() - steady_min_cost(g, d, obj.cost_per_length)
        worst = max(worst, abs(got - want))
        steady_ok += abs(got - want) <= 1e-6
    for k in range(50):
        rng = random.Random(700 + k)
        n = rng.randint(2, 6)
        T = rng.randint(2, 10)
        g = random_network(rng, n, rng.randint(0, n), max_time=3)
        d = random_demand(rng, n, rng.randint(1, 5), T)
        y = np.array([rng.randint(0, 3) for _ in range(n)], dtype=float)
        obj = MpObjective(fare=rng.uniform(2.0, 10.0), cost_per_length=1.0)
        _, got = solve_timevarying_routing(g, d, y, obj)
        want = timevarying_optimum(g, d, y, obj.fare)
        worst = max(worst, abs(got - want))
        tv_ok += abs(got - want) <= 1e-6
    elapsed = time.perf_counter() - start
    ok = steady_ok == 50 and tv_ok == 50 and elapsed < 120
    report(6, ok, f"steady {steady_ok}/50, time-varying {tv_ok}/50 within 1e-6 of the oracle "
                  f"(worst gap {worst:.1e}), {elapsed:.1f}s (< 120s)")


# 7 ------------------------------------------------------------------------

def test_criterion_07_end_to_end_completeness():
    honest = [n for n in bundled_scenarios() if n.startswith("honest")]
    kinds, runs, bad = set(), 0, []
    for name in honest:
        sc = resolve_scenario(name)
        query_sets = [default_queries(sc.network, sc.pricing)] + ([sc.queries] if sc.queries else [])
        for qs in query_sets:
            verdicts = {}
            for backend in (OPAQUE, TRANSPARENT):
                rep = run(sc, backend=backend, queries=qs)
                runs += 1
                verdicts[backend] = [q.verdict for q in rep.queries]
                for q in rep.queries:
                    kinds.add(q.kind)
                    if not q.verdict.accepted:
                        bad.append(f"{name}/{backend}/{q.kind}:{q.verdict.failure_class}")
                if rep.total_fine != 0 or rep.detections:
                    bad.append(f"{name}/{backend}: fines {rep.total_fine}")
            if verdicts[OPAQUE] != verdicts[TRANSPARENT]:
                bad.append(f"{name}: backends disagree")
    ok = not bad and kinds >= ADMISSIBLE
    report(7, ok, f"{len(honest)} honest scenarios, {runs} runs, query kinds {len(kinds & ADMISSIBLE)}/"
                  f"{len(ADMISSIBLE)}, problems: {bad[:3] or 'none'}")


# 8 ------------------------------------------------------------------------

def test_criterion_08_privacy_ledger():
    leaks, extra, union = [], [], set()
    names = bundled_scenarios()
    for name in names:
        rep = run(resolve_scenario(name), backend=OPAQUE)
        union |= set(rep.privacy["ma_kinds"])
        if rep.privacy["plaintext_leaks"]:
            leaks.append(name)
        if rep.privacy["unsanctioned"]:
            extra.append(name)
    ok = not leaks and not extra and union == MA_SANCTIONED
    report(8, ok, f"{len(names)} scenarios, plaintext leaks in {leaks or 'none'}, unsanctioned kinds in "
                  f"{extra or 'none'}, never seen {sorted(MA_SANCTIONED - union) or 'none'}")


# 9 ------------------------------------------------------------------------

def test_criterion_09_determinism(tmp_path, capsys):
    names = bundled_scenarios()[:max(20, len(bundled_scenarios()))]
    differing = []
    for name in names:
        digests = []
        for k in range(2):
            out = tmp_path / f"{name}-{k}"
            assert main(["run", name, "--out", str(out)]) == 0
            digests.append(hashlib.sha256((out / "report.json").read_bytes()).hexdigest())
        if digests[0] != digests[1]:
            differing.append(name)
    capsys.readouterr()
    ok = len(names) >= 20 and not differing
    report(9, ok, f"{len(names)} scenarios run twice via the CLI, differing reports: {differing or 'none'}")


# 10 -----------------------------------------------------------------------

def test_criterion_10_fine_calculus():
    seeds = range(2000)
    grid = list(itertools.product((50.0, 100.0, 250.0), (0.0, 20.0, 45.0), (0.1, 0.3, 0.5, 0.9)))
    strict = simulated = 0
    worst = None
    for u_d, u_h, p in grid:
        margin = 1.0 + fine_margin_for_confidence(u_d - u_h, p, len(seeds))
        policy = FinePolicy(floor=0.0, u_honest=u_h, u_dishonest=u_d, margin=margin)
        fine = levy_fine("RRA", policy, p)
        strict += fine > fine_threshold(u_d, u_h, p)
        util, freq = simulate_dishonest_utility(fine, u_d, p, seeds)
        simulated += util < u_h
        if worst is None or util - u_h > worst:
            worst = util - u_h
    example = levy_fine("RRA", FinePolicy(u_honest=80.0, u_dishonest=100.0, margin=1.0), 0.1)
    ok = strict == len(grid) and simulated == len(grid) and example == pytest.approx(101.0)
    report(10, ok, f"strict inequality on {strict}/{len(grid)} grid points, simulated dishonest utility below "
                   f"honest on {simulated}/{len(grid)} (closest gap {worst:.2f}); worked example F={example:g}")
