import random

import pytest

from pmm import crypto
from pmm import provider as mp
from pmm.netmodel import DelayFn, Edge, Network, Request, Vehicle, parse_network

RING4 = """vertices 4
dt 1
horizon 60
edge 0 1 affine 1 1
edge 1 2 affine 1 1
edge 2 3 affine 1 1
edge 3 0 affine 1 1
edge 1 0 affine 1 1
edge 2 1 affine 1 1
edge 3 2 affine 1 1
edge 0 3 affine 1 1
"""


def ring(n: int, two_way: bool = False, horizon: int = 60) -> Network:
    edges = [(i, (i + 1) % n) for i in range(n)]
    if two_way:
        edges += [((i + 1) % n, i) for i in range(n)]
    return Network(n, tuple(Edge(k, a, b, DelayFn.affine(1.0, 0.5)) for k, (a, b) in enumerate(edges)),
                   1.0, horizon)


def pigou() -> Network:
    return Network(2, (Edge(0, 0, 1, DelayFn.affine(1.0)), Edge(1, 0, 1, DelayFn.affine(1e-9, 1.0)),
                       Edge(2, 1, 0, DelayFn.affine(1.0))), 1.0, 20)


def random_requests(n: int, count: int, rng: random.Random, window: int = 30) -> list[Request]:
    out = []
    for i in range(count):
        o = rng.randrange(n)
        d = rng.choice([v for v in range(n) if v != o])
        out.append(Request(f"r{i}", o, d, rng.randrange(window)))
    return out


def served_state(network: Network, count: int, seed: int, strategy=None, vehicles: int = 2):
    """Provider state with receipts issued and demand committed."""
    rng = random.Random(seed)
    keys = crypto.keygen(rng)
    fleet = [mp.FleetVehicle(Vehicle(f"v{k}", "sedan", 2.0), (k * 3) % network.n) for k in range(vehicles)]
    trips, _ = mp.serve_and_record(random_requests(network.n, count, rng), network, fleet, mp.Pricing(),
                                   keys.secret)
    state = mp.ProviderState(keys, network, trips)
    receipts = {t.trip_id: mp.issue_receipt(state, t.trip_id, crypto.new_nonce(rng)) for t in trips}
    if strategy is not None:
        state.strategy = strategy(trips) if callable(strategy) and not hasattr(strategy, "apply") else strategy
    mp.commit_demand(state, rng)
    return state, receipts, rng


@pytest.fixture
def ring4() -> Network:
    return parse_network(RING4)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
