"""Command-line entry point: ``hypersyn <subcommand>``.

Exit codes: 0 success, 1 mismatch / failed verification / misbehavior under
``run --strict``, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import fixtures
from .arbitrage import TriangleView, best_cycle
from .errors import ConfigError, HypersynError, InvalidProof
from .exchange import ReservePair, quote_input, quote_output
from .smt import MerkleProof, proves_absence, proves_presence, verify_proof


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _amount(text: str) -> int:
    try:
        value = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer amount: {text!r}")
    if value < 0:
        raise argparse.ArgumentTypeError("amounts are non-negative")
    return value


def _positive(text: str) -> int:
    value = _amount(text)
    if value == 0:
        raise argparse.ArgumentTypeError("reserves must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypersyn", description="Hypersyn protocol tools")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a simulation scenario")
    r.add_argument("config", help="scenario YAML file")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--until", type=int, help="override the horizon (ticks)")
    r.add_argument("--out", default="out", help="directory for metrics.jsonl, edges.csv, summary.json")
    r.add_argument("--strict", action="store_true", help="exit 1 if any misbehavior was detected")

    q = sub.add_parser("quote", help="constant-product quote")
    q.add_argument("--ra", type=_positive, required=True, help="reserve of the input credit")
    q.add_argument("--rb", type=_positive, required=True, help="reserve of the output credit")
    g = q.add_mutually_exclusive_group(required=True)
    g.add_argument("--out-amount", type=_amount, help="amount to receive; prints the required input")
    g.add_argument("--in-amount", type=_amount, help="amount to pay in; prints the output")

    a = sub.add_parser("arbitrage-plan", help="best triangular cycle for six reserves")
    for name in ("ij", "ji", "jk", "kj", "ki", "ik"):
        a.add_argument(f"--r-{name}", type=_positive, required=True, help=f"reserve R({name[0]},{name[1]})")
    a.add_argument("--start", choices=("i", "j", "k"), default="i")

    v = sub.add_parser("verify-proof", help="verify a Merkle proof against a root")
    v.add_argument("--root", required=True, help="root digest (hex)")
    v.add_argument("--proof", required=True, help="file holding the proof bytes as hex (or JSON with proof_hex)")
    v.add_argument("--key", help="expected key (hex); checks presence or absence of this key")

    f = sub.add_parser("fixtures", help="re-validate the golden fixtures")
    f.add_argument("--check", action="store_true", required=True)
    f.add_argument("--dir", default=None, help="fixture directory (default: packaged fixtures)")

    d = sub.add_parser("dht", help="publish / look up files in a scripted mini-world")
    d.add_argument("--nodes", type=int, default=16)
    d.add_argument("--seed", type=int, default=1)
    d.add_argument("--publish", action="append", default=[], metavar="INDEX", type=int, help="node index to publish")
    d.add_argument("--lookup", action="append", default=[], metavar="INDEX", type=int, help="node index to look up")
    return p


def cmd_run(args) -> int:
    from .sim import ScenarioConfig, build, write_outputs
    from .sim.world import edge_rows

    try:
        cfg = ScenarioConfig.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.until is not None:
        cfg.horizon = args.until
    world = build(cfg)
    world.finish()
    summary = write_outputs(world, args.out)
    summary["edges_final"] = [f"{r['lo']}-{r['hi']} {r['r_lo']}:{r['r_hi']}" for r in edge_rows(world)[:10]]
    payments = [e for e in world.events if e["type"] == "payment"]
    if len(payments) == 1:
        summary["payment"] = {"price": payments[0]["price"], "paid": payments[0]["paid"]}
    print(json.dumps(summary, sort_keys=True, indent=2))
    if args.strict and summary["misbehavior_events"]:
        return 1
    return 0


def cmd_quote(args) -> int:
    res = ReservePair(args.ra, args.rb)
    try:
        if args.out_amount is not None:
            print(quote_input(res, args.out_amount))
        else:
            print(quote_output(res, args.in_amount))
    except HypersynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_arbitrage(args) -> int:
    view = TriangleView("i", "j", "k", args.r_ij, args.r_ji, args.r_jk, args.r_kj, args.r_ki, args.r_ik)
    plan = best_cycle(view, args.start)
    if plan is None:
        print("none")
        return 0
    print(f"direction {plan.direction}")
    print(f"path {'->'.join(plan.path)}->{plan.path[0]}")
    print(f"delta {plan.delta_in}")
    print(f"real_delta {plan.real_delta:.6f}")
    print(f"profit {plan.expected_profit}")
    return 0


def _read_proof(path: str) -> MerkleProof:
    text = Path(path).read_text().strip()
    if text.startswith("{"):
        text = json.loads(text)["proof_hex"]
    return MerkleProof.from_bytes(bytes.fromhex(text))


def cmd_verify(args) -> int:
    try:
        root = bytes.fromhex(args.root)
        proof = _read_proof(args.proof)
    except (OSError, ValueError, KeyError, InvalidProof) as exc:
        print(f"FAIL ({exc})")
        return 1
    if args.key:
        key = bytes.fromhex(args.key)
        if proves_presence(root, key, None, proof):
            print("OK presence")
            return 0
        if proves_absence(root, key, proof):
            print("OK absence")
            return 0
        print("FAIL")
        return 1
    if verify_proof(root, proof):
        print("OK " + ("presence" if proof.leaf_value is not None else "absence"))
        return 0
    print("FAIL")
    return 1


def cmd_fixtures(args) -> int:
    root = Path(args.dir) if args.dir else fixtures.FIXTURE_DIR
    results = fixtures.check_all(root)
    if not results:
        print(f"FAIL no fixtures under {root}")
        return 1
    bad = 0
    for name, n, failures in results:
        status = "OK" if not failures else "FAIL"
        print(f"{status} {name} ({n} cases)")
        for f in failures:
            print(f"  {f}")
        bad += bool(failures)
    return 1 if bad else 0


def cmd_dht(args) -> int:
    from .network import LocalNetwork
    from .node import Node
    from .sim.config import derive_seed

    if args.nodes < 1:
        print("error: --nodes must be positive", file=sys.stderr)
        return 2
    net = LocalNetwork()
    nodes = [Node(derive_seed(args.seed, f"dht{i}"), net, network_address=f"dht{i}") for i in range(args.nodes)]
    for n in nodes:
        n.attach_dht()
    for n in nodes:
        n.dht.bootstrap([(nodes[0].address, nodes[0].network_address)])
    for i in args.publish + args.lookup:
        if not 0 <= i < len(nodes):
            print(f"error: node index {i} out of range", file=sys.stderr)
            return 2
    for i in args.publish:
        stored = nodes[i].publish_file()
        print(f"published dht{i} m={nodes[i].m} replicas={len(stored)}")
    status = 0
    for i in args.lookup:
        asker = nodes[(i + 1) % len(nodes)]
        f = asker.dht.lookup(nodes[i].address)
        if f is None:
            print(f"dht{i} not found")
            status = 1
        else:
            print(f"dht{i} m={f.m} root={f.root.hex()[:16]} peers={len(f.peers)} queries={asker.dht.last_queries}")
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": cmd_run,
        "quote": cmd_quote,
        "arbitrage-plan": cmd_arbitrage,
        "verify-proof": cmd_verify,
        "fixtures": cmd_fixtures,
        "dht": cmd_dht,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
