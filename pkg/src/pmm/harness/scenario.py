"""Plain-text scenario files.

A scenario is a handful of top-level directives plus brace-delimited blocks::

    scenario honest_small
    seed 7
    fine 100                      # N, paid per unresolved rider receipt

    network {
      vertices 4
      dt 1
      horizon 60
      edge 0 1 affine 1 1         # <src> <dst> <kind> <params...> [length=<l>]
    }

    demand {
      request r0 0 2 3            # <id> <origin> <destination> <time>
      generate count=10 window=20 seed=3
      riders report=all           # all | none
      riders dispute=trip-0002    # riders who dispute anyway (comma list)
    }

    mp {
      vehicle v1 at=0 model=sedan rate=2.5
      wage alpha=1 beta=2
      fare base=2 per_edge=1
      strategy honest             # see below
    }

    audit {
      mode ara epsilon=0 gps_drop=0
      # mode rra p=0.3 round_len=4 rounds=10
      # relay round=0 edge=3 time=1 vehicle=v1
      fine floor=10 u_honest=80 u_dishonest=100 margin=1
    }

    queries {
      regions 0 0 1 1                       # vertex -> region
      background 100 100 100 100            # per-edge background flow
      speed_limits 0 0 0 0                  # per-edge, 0 = none
      project a: add_edge 0 2 affine 1 1; set_delay 0 affine 0.5 1
      query trip_count
      query sop scale=0.1 projects=a
    }

Strategy lines (``inject`` may repeat)::

    strategy honest
    strategy omit trip-0001 trip-0003
    strategy inject path=0,1 time=5 vehicle=v1
    strategy tamper trip-0002 driver_wage=99
    strategy misreport trip-0001 shift=1 resign=true

Without a ``queries`` block every admissible query kind runs with defaults.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from ..authority.fines import FinePolicy
from ..authority.queries import (CongestionContribution, CongestionContributionLimit, CongestionPricing,
                                 Emissions, EmissionsLimit, Identity, Period2Accuracy, RegulationBundle,
                                 SopSelection, SpeedLimit, TripCount, WaitEquity, WaitTimeEquity, Wage)
from ..flowopt.projects import parse_project
from ..netmodel import Network, Request, Vehicle, parse_network
from ..provider import Pricing

BLOCKS = ("network", "demand", "mp", "audit", "queries")
STRATEGIES = ("honest", "omit", "inject", "tamper", "misreport")


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(field)
        super().__init__(": ".join(where + [message]))


@dataclass(frozen=True)
class Generator:
    count: int
    window: int
    seed: int | None = None

    def requests(self, n: int, rng: random.Random, prefix: str) -> list[Request]:
        rng = random.Random(self.seed) if self.seed is not None else rng
        out = []
        for i in range(self.count):
            o = rng.randrange(n)
            d = rng.randrange(n - 1)
            d += d >= o
            out.append(Request(f"{prefix}{i}", o, d, rng.randrange(self.window)))
        return out


@dataclass(frozen=True)
class StrategySpec:
    kind: str = "honest"
    args: tuple = ()
    line: int | None = None


@dataclass(frozen=True)
class AuditSpec:
    mode: str = "ara"
    epsilon: float = 0.0
    gps_drop: float = 0.0
    p: float = 0.5
    round_len: int = 4
    rounds: int | None = None
    relays: tuple[tuple[int, int, int, str], ...] = ()  # (round, edge, time, vehicle)


@dataclass
class Scenario:
    name: str
    network: Network
    seed: int = 0
    rider_fine: float = 100.0
    requests: list[Request] = field(default_factory=list)
    generators: list[Generator] = field(default_factory=list)
    riders_report: bool = True
    false_disputes: tuple[str, ...] = ()
    disputes_line: int | None = None
    fleet: list[tuple[Vehicle, int]] = field(default_factory=list)
    pricing: Pricing = field(default_factory=Pricing)
    strategy: StrategySpec = field(default_factory=StrategySpec)
    audit: AuditSpec = field(default_factory=AuditSpec)
    fine_policy: FinePolicy = field(default_factory=FinePolicy)
    queries: list | None = None
    source: str = ""

    @property
    def fines(self) -> FinePolicy:
        return FinePolicy(self.rider_fine, self.fine_policy.floor, self.fine_policy.u_honest,
                          self.fine_policy.u_dishonest, self.fine_policy.margin)


# --------------------------------------------------------------------------
# Parsing helpers


def _kv(tokens, lineno: int, allowed: dict) -> dict:
    """Parse ``key=value`` tokens, converting with ``allowed[key]``."""
    out = {}
    for tok in tokens:
        key, sep, val = tok.partition("=")
        if not sep:
            raise ScenarioError(f"expected key=value, got {tok!r}", lineno)
        if key not in allowed:
            raise ScenarioError(f"unknown option (allowed: {', '.join(allowed)})", lineno, key)
        try:
            out[key] = allowed[key](val)
        except ValueError:
            raise ScenarioError(f"bad value {val!r}", lineno, key) from None
    return out


def _bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes"):
        return True
    if v.lower() in ("0", "false", "no"):
        return False
    raise ValueError(v)


def _ints(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x)


def _split_blocks(text: str):
    """Yield ``(block or None, lineno, tokens)`` for every meaningful line."""
    block = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if block is None and line.endswith("{"):
            name = line[:-1].strip()
            if name not in BLOCKS:
                raise ScenarioError(f"unknown block {name!r}", lineno)
            block = (name, lineno)
            yield name, lineno, ["{"]
            continue
        if line == "}":
            if block is None:
                raise ScenarioError("unmatched '}'", lineno)
            yield block[0], lineno, ["}"]
            block = None
            continue
        yield (block[0] if block else None), lineno, line.split()
    if block is not None:
        raise ScenarioError(f"block {block[0]!r} is never closed", block[1])


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    lines: dict[str | None, list[tuple[int, list[str]]]] = {}
    seen = set()
    net_text: list[str] = []
    net_lines: list[int] = []
    for block, lineno, toks in _split_blocks(text):
        if toks == ["{"]:
            if block in seen:
                raise ScenarioError(f"block {block!r} appears twice", lineno)
            seen.add(block)
            continue
        if toks == ["}"]:
            continue
        if block == "network":
            net_text.append(" ".join(toks))
            net_lines.append(lineno)
            continue
        lines.setdefault(block, []).append((lineno, toks))

    if "network" not in seen:
        raise ScenarioError("missing network block", None, "network")
    try:
        network = parse_network("\n".join(net_text))
    except ValueError as exc:
        msg = str(exc)
        line = None
        if msg.startswith("line "):
            k, _, msg = msg[5:].partition(": ")
            line = net_lines[int(k) - 1]
        raise ScenarioError(msg, line, "network") from None
    if network.m == 0:
        raise ScenarioError("network has no edges", None, "network")

    sc = Scenario(name=Path(source).stem.replace(".pmm", "") or "scenario", network=network, source=source)
    _parse_top(sc, lines.get(None, []))
    _parse_demand(sc, lines.get("demand", []))
    _parse_mp(sc, lines.get("mp", []))
    _parse_audit(sc, lines.get("audit", []))
    if "queries" in seen:
        sc.queries = _parse_queries(sc, lines.get("queries", []))
    return sc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    return parse_scenario(text, str(path))


def _parse_top(sc: Scenario, lines):
    for lineno, toks in lines:
        key, *rest = toks
        if len(rest) != 1:
            raise ScenarioError("expected exactly one value", lineno, key)
        try:
            if key == "scenario":
                sc.name = rest[0]
            elif key == "seed":
                sc.seed = int(rest[0])
                if sc.seed < 0:
                    raise ValueError
            elif key == "fine":
                sc.rider_fine = float(rest[0])
                if sc.rider_fine < 0:
                    raise ValueError
            else:
                raise ScenarioError("unknown directive", lineno, key)
        except ValueError:
            raise ScenarioError(f"bad value {rest[0]!r}", lineno, key) from None


def _check_vertex(sc: Scenario, v: int, lineno: int, name: str):
    if not 0 <= v < sc.network.n:
        raise ScenarioError(f"vertex {v} outside 0..{sc.network.n - 1}", lineno, name)


def _parse_demand(sc: Scenario, lines):
    ids = set()
    for lineno, toks in lines:
        key, *rest = toks
        if key == "request":
            if len(rest) != 4:
                raise ScenarioError("expected 'request <id> <origin> <destination> <time>'", lineno)
            rid = rest[0]
            try:
                o, d, t = (int(x) for x in rest[1:])
            except ValueError:
                raise ScenarioError("origin, destination and time must be integers", lineno, "request") from None
            _check_vertex(sc, o, lineno, "origin")
            _check_vertex(sc, d, lineno, "destination")
            if not 0 <= t < sc.network.horizon:
                raise ScenarioError(f"time {t} outside the horizon", lineno, "time")
            if rid in ids:
                raise ScenarioError(f"duplicate request id {rid!r}", lineno)
            ids.add(rid)
            sc.requests.append(Request(rid, o, d, t))
        elif key == "generate":
            kv = _kv(rest, lineno, {"count": int, "window": int, "seed": int})
            if "count" not in kv:
                raise ScenarioError("generate needs count=", lineno, "count")
            window = kv.get("window", sc.network.horizon // 2)
            if kv["count"] < 0 or not 0 < window <= sc.network.horizon:
                raise ScenarioError("count must be >= 0 and window within the horizon", lineno)
            if sc.network.n < 2:
                raise ScenarioError("generated demand needs at least two vertices", lineno)
            sc.generators.append(Generator(kv["count"], window, kv.get("seed")))
        elif key == "riders":
            kv = _kv(rest, lineno, {"report": str, "dispute": str})
            mode = kv.get("report", "all")
            if mode not in ("all", "none"):
                raise ScenarioError("report must be 'all' or 'none'", lineno, "report")
            sc.riders_report = mode == "all"
            if "dispute" in kv:
                sc.false_disputes = tuple(t for t in kv["dispute"].split(",") if t)
                sc.disputes_line = lineno
        else:
            raise ScenarioError("unknown demand directive", lineno, key)


def _parse_mp(sc: Scenario, lines):
    pricing = {}
    strategy = None
    injects = []
    vids = set()
    for lineno, toks in lines:
        key, *rest = toks
        if key == "vehicle":
            if not rest:
                raise ScenarioError("vehicle needs an id", lineno)
            vid, *opts = rest
            kv = _kv(opts, lineno, {"at": int, "model": str, "rate": float})
            at = kv.get("at", 0)
            _check_vertex(sc, at, lineno, "at")
            if vid in vids:
                raise ScenarioError(f"duplicate vehicle {vid!r}", lineno)
            vids.add(vid)
            sc.fleet.append((Vehicle(vid, kv.get("model", "generic"), kv.get("rate", 0.0)), at))
        elif key == "wage":
            pricing.update(_kv(rest, lineno, {"alpha": float, "beta": float}))
        elif key == "fare":
            kv = _kv(rest, lineno, {"base": float, "per_edge": float})
            pricing.update({"base_fare": kv[k] for k in ("base",) if k in kv})
            pricing.update({k: kv[k] for k in ("per_edge",) if k in kv})
        elif key == "strategy":
            if not rest or rest[0] not in STRATEGIES:
                raise ScenarioError(f"strategy must be one of {', '.join(STRATEGIES)}", lineno, "strategy")
            kind, args = rest[0], rest[1:]
            if kind == "inject":
                kv = _kv(args, lineno, {"path": _ints, "time": int, "vehicle": str})
                if not kv.get("path") or "time" not in kv:
                    raise ScenarioError("inject needs path= and time=", lineno)
                for e in kv["path"]:
                    if not 0 <= e < sc.network.m:
                        raise ScenarioError(f"no edge {e}", lineno, "path")
                injects.append((kv["path"], kv["time"], kv.get("vehicle"), lineno))
                continue
            if strategy is not None:
                raise ScenarioError("only one strategy per scenario", lineno, "strategy")
            strategy = _strategy_spec(kind, args, lineno)
        else:
            raise ScenarioError("unknown mp directive", lineno, key)
    if injects:
        if strategy is not None:
            raise ScenarioError("inject cannot be combined with another strategy", injects[0][3], "strategy")
        strategy = StrategySpec("inject", tuple(injects), injects[0][3])
    sc.strategy = strategy or StrategySpec()
    sc.pricing = Pricing(**pricing)
    if not sc.fleet:
        sc.fleet.append((Vehicle("v0"), 0))


def _strategy_spec(kind: str, args, lineno: int) -> StrategySpec:
    if kind == "honest":
        if args:
            raise ScenarioError("honest takes no arguments", lineno, "strategy")
        return StrategySpec("honest", (), lineno)
    if kind == "omit":
        if not args:
            raise ScenarioError("omit needs at least one trip id", lineno, "strategy")
        return StrategySpec("omit", tuple(args), lineno)
    if kind == "tamper":
        if len(args) < 2:
            raise ScenarioError("tamper needs a trip id and field=value edits", lineno, "strategy")
        edits = []
        for tok in args[1:]:
            name, sep, val = tok.partition("=")
            if not sep:
                raise ScenarioError(f"expected field=value, got {tok!r}", lineno, "strategy")
            edits.append((name, val))
        return StrategySpec("tamper", (args[0], tuple(edits)), lineno)
    # misreport
    if not args:
        raise ScenarioError("misreport needs a trip id", lineno, "strategy")
    kv = _kv(args[1:], lineno, {"shift": int, "resign": _bool})
    if kv.get("shift", 1) < 1:
        raise ScenarioError("shift must be positive", lineno, "shift")
    return StrategySpec("misreport", (args[0], kv.get("shift", 1), kv.get("resign", True)), lineno)


def _parse_audit(sc: Scenario, lines):
    spec: dict = {}
    relays = []
    for lineno, toks in lines:
        key, *rest = toks
        if key == "mode":
            if not rest or rest[0] not in ("ara", "rra"):
                raise ScenarioError("mode must be 'ara' or 'rra'", lineno, "mode")
            spec["mode"] = rest[0]
            if rest[0] == "ara":
                kv = _kv(rest[1:], lineno, {"epsilon": float, "gps_drop": float})
            else:
                kv = _kv(rest[1:], lineno, {"p": float, "round_len": int, "rounds": int, "gps_drop": float})
            if not 0 <= kv.get("epsilon", 0) <= 1:
                raise ScenarioError("epsilon must lie in [0, 1]", lineno, "epsilon")
            if not 0 <= kv.get("gps_drop", 0) <= 1:
                raise ScenarioError("gps_drop must lie in [0, 1]", lineno, "gps_drop")
            if not 0 < kv.get("p", 0.5) < 1:
                raise ScenarioError("p must lie strictly between 0 and 1", lineno, "p")
            if kv.get("round_len", 1) < 1 or kv.get("rounds", 1) < 1:
                raise ScenarioError("round_len and rounds must be positive", lineno)
            spec.update(kv)
        elif key == "relay":
            kv = _kv(rest, lineno, {"round": int, "edge": int, "time": int, "vehicle": str})
            if {"round", "edge", "time"} - kv.keys():
                raise ScenarioError("relay needs round=, edge= and time=", lineno)
            if not 0 <= kv["edge"] < sc.network.m:
                raise ScenarioError(f"no edge {kv['edge']}", lineno, "edge")
            relays.append((kv["round"], kv["edge"], kv["time"], kv.get("vehicle", "relayed")))
        elif key == "fine":
            kv = _kv(rest, lineno, {"floor": float, "u_honest": float, "u_dishonest": float, "margin": float})
            if kv.get("margin", 1.0) <= 0:
                raise ScenarioError("margin must be positive", lineno, "margin")
            sc.fine_policy = FinePolicy(**kv)
        else:
            raise ScenarioError("unknown audit directive", lineno, key)
    if relays and spec.get("mode") != "rra":
        raise ScenarioError("relay attacks need mode rra", None, "relay")
    sc.audit = AuditSpec(**spec, relays=tuple(relays))


def _table(sc, toks, lineno, size, conv):
    vals = []
    for v in toks[1:]:
        try:
            vals.append(conv(v))
        except ValueError:
            raise ScenarioError(f"bad value {v!r}", lineno, toks[0]) from None
    if len(vals) != size:
        raise ScenarioError(f"expected {size} values, got {len(vals)}", lineno, toks[0])
    return tuple(vals)


def _parse_queries(sc: Scenario, lines) -> list:
    m, n = sc.network.m, sc.network.n
    tables = {"regions": None, "background": None, "speed_limits": None}
    projects = {}
    for lineno, toks in lines:
        if toks[0] == "regions":
            tables["regions"] = _table(sc, toks, lineno, n, int)
        elif toks[0] == "background":
            tables["background"] = _table(sc, toks, lineno, m, float)
        elif toks[0] == "speed_limits":
            tables["speed_limits"] = _table(sc, toks, lineno, m, float)
        elif toks[0] == "project":
            head = " ".join(toks[1:])
            pid, sep, body = head.partition(":")
            pid = pid.strip()
            if not sep or not pid:
                raise ScenarioError("expected 'project <id>: <edit>; <edit>'", lineno, "project")
            try:
                projects[pid] = parse_project(pid, "\n".join(p.strip() for p in body.split(";")))
            except (ValueError, IndexError) as exc:
                raise ScenarioError(str(exc), lineno, "project") from None
    if tables["background"] is not None and any(b <= 0 for b in tables["background"]):
        raise ScenarioError("background flows must be positive", None, "background")

    def need(name, lineno):
        if tables[name] is None:
            raise ScenarioError(f"this query needs a '{name}' table", lineno, name)
        return tables[name]

    out = []
    for lineno, toks in lines:
        if toks[0] != "query":
            continue
        if len(toks) < 2:
            raise ScenarioError("query needs a kind", lineno)
        kind, args = toks[1], toks[2:]
        if kind == "trip_count":
            q = TripCount()
        elif kind == "identity":
            q = Identity()
        elif kind == "wage":
            q = Wage(**_kv(args, lineno, {"alpha": float, "beta": float}))
        elif kind == "wait_equity":
            kv = _kv(args, lineno, {"tau": float})
            q = WaitEquity(need("regions", lineno), kv.get("tau", 0.0))
        elif kind == "congestion_pricing":
            q = CongestionPricing(**_kv(args, lineno, {"scale": float, "tol": float}))
        elif kind == "sop":
            kv = _kv(args, lineno, {"scale": float, "projects": lambda v: tuple(v.split(","))})
            ids = kv.pop("projects", tuple(projects))
            missing = [p for p in ids if p not in projects]
            if missing or not ids:
                raise ScenarioError(f"unknown projects {missing}" if missing else "no projects defined",
                                    lineno, "projects")
            q = SopSelection(tuple(projects[p] for p in ids), **kv)
        elif kind == "emissions":
            q = Emissions(**_kv(args, lineno, {"limit": float}))
        elif kind == "congestion_contribution":
            kv = _kv(args, lineno, {"limit": float})
            q = CongestionContribution(need("background", lineno), kv.get("limit", 1.0))
        elif kind == "regulation":
            q = RegulationBundle(tuple(_predicate(tok, lineno, need) for tok in args))
        else:
            raise ScenarioError(f"unknown query kind {kind!r}", lineno, "query")
        out.append(q)
    return out


def _predicate(tok: str, lineno: int, need):
    name, _, opts = tok.partition(":")
    kv = _kv([o for o in opts.split(",") if o], lineno, {"tau": float, "limit": float})
    if name == "speed_limit":
        return SpeedLimit(need("speed_limits", lineno))
    if name == "period2_accuracy":
        return Period2Accuracy()
    if name == "wait_equity":
        return WaitTimeEquity(need("regions", lineno), kv.get("tau", 0.0))
    if name == "emissions":
        return EmissionsLimit(kv.get("limit", 0.0))
    if name == "congestion":
        return CongestionContributionLimit(need("background", lineno), kv.get("limit", 1.0))
    raise ScenarioError(f"unknown regulation predicate {name!r}", lineno, "regulation")


def default_queries(network: Network, pricing: Pricing = Pricing()) -> list:
    """One query of every admissible kind, with parameters that suit any network."""
    from dataclasses import replace

    from ..flowopt.projects import AddEdge, Project, SetDelay
    from ..netmodel import DelayFn

    n, m = network.n, network.m
    regions = tuple(v % 2 for v in range(n))
    background = tuple(100.0 for _ in range(m))
    e0 = network.edges[0]
    projects = (
        Project("widen", (SetDelay(0, replace(e0.delay, a=e0.delay.a * 0.5)),)),
        Project("shortcut", (AddEdge(0, n - 1, DelayFn.affine(1.0, 1.0)),)),
    )
    return [
        TripCount(),
        Wage(pricing.alpha, pricing.beta),
        WaitEquity(regions, 5.0),
        CongestionPricing(0.05),
        SopSelection(projects, 0.05),
        CongestionContribution(background, 0.5),
        Emissions(1000.0),
        RegulationBundle((SpeedLimit(tuple(0.0 for _ in range(m))), Period2Accuracy(),
                          WaitTimeEquity(regions, 10.0))),
    ]
