"""``pmm`` command line.

Exit status 0 means the protocol ran to completion, whatever the verdicts;
anything else is a harness error (bad scenario, unreadable file, ...).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from importlib import resources
from pathlib import Path

from .. import proofsys
from ..authority.circuit import EvaluationCircuit
from ..authority.queries import canonical_json
from .run import batch, run
from .scenario import ScenarioError, load_scenario, parse_scenario

EXIT_OK = 0
EXIT_ERROR = 2


def bundled_scenarios() -> list[str]:
    root = resources.files("pmm") / "scenarios"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".pmm"))


def resolve_scenario(name: str):
    """A path to a scenario file, or the name of a bundled one."""
    path = Path(name)
    if path.exists():
        return load_scenario(path)
    res = resources.files("pmm") / "scenarios" / f"{name.removesuffix('.pmm')}.pmm"
    if res.is_file():
        return parse_scenario(res.read_text(), res.name)
    raise ScenarioError(f"no scenario file or bundled scenario named {name!r}")


def _u64(v: str) -> int:
    n = int(v)
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return n


def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario)
    rep = run(sc, args.seed, args.backend)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "timing.json").write_text(json.dumps(rep.timing, indent=2, sort_keys=True) + "\n")
    for i, q in enumerate(rep.queries):
        if q.circuit is None:
            continue
        base = out / f"q{i:02d}_{q.kind}.pmmt"
        base.write_bytes(q.transcript)
        public = {"backend": rep.backend, "circuit": q.circuit, "z": q.z, "oracle_pk": rep.oracle_pk}
        Path(f"{base}.public.json").write_text(canonical_json(public) + "\n")
    print(f"scenario {rep.scenario} seed={rep.seed} backend={rep.backend} sigma={rep.sigma}")
    for q in rep.queries:
        print(f"{q.kind}: {q.verdict.record()}")
    print(f"detections={','.join(rep.detections) or '-'} fines={rep.fines['total']:g} "
          f"privacy={'ok' if rep.privacy['ok'] else 'VIOLATED'}")
    print(f"report written to {out / 'report.json'}")
    return EXIT_OK


def cmd_batch(args) -> int:
    sc = resolve_scenario(args.scenario)
    stats = batch(sc, args.seeds, args.backend, args.first_seed)
    print(json.dumps(stats.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    path = Path(args.file)
    public_path = Path(args.public) if args.public else Path(f"{path}.public.json")
    transcript = proofsys.ProofTranscript.from_bytes(path.read_bytes())
    public = json.loads(public_path.read_text())
    circuit = EvaluationCircuit.from_description(public["circuit"])
    ps = proofsys.ProofSystem(public["backend"], oracle_pk=bytes.fromhex(public.get("oracle_pk") or ""))
    pp = ps.setup(circuit)
    ok = ps.verify(pp, public["z"], transcript)
    print(f"transcript {path.name}: {'valid' if ok else 'invalid'}")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmm", description="Run the mobility-data verification protocol.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario end to end")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    p.add_argument("--seed", type=_u64, default=None, help="overrides the scenario's seed")
    p.add_argument("--out", default="pmm-out", help="directory for the report and transcripts")
    p.add_argument("--backend", choices=sorted(proofsys.BACKEND_IDS), default=proofsys.OPAQUE)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="run many seeds and report detection statistics")
    p.add_argument("scenario")
    p.add_argument("--seeds", type=int, required=True)
    p.add_argument("--first-seed", type=_u64, default=0)
    p.add_argument("--backend", choices=sorted(proofsys.BACKEND_IDS), default=proofsys.OPAQUE)
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("verify-transcript", help="verify a transcript written by 'pmm run'")
    p.add_argument("file")
    p.add_argument("--public", help="public inputs (default: <file>.public.json)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    if os.environ.get("PMM_LOG"):
        logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    if getattr(args, "seeds", 1) < 1:
        print("pmm: error: --seeds must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (ScenarioError, OSError, ValueError, KeyError) as exc:
        print(f"pmm: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
