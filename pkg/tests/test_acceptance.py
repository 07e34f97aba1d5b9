"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Run with pytest (the lines appear in the terminal summary) or directly:
    python3 tests/test_acceptance.py
"""

from __future__ import annotations

import itertools
import math
import random
import sys
import time
from decimal import Decimal
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402

from hypersyn import node as node_mod  # noqa: E402
from hypersyn import smt as smt_mod  # noqa: E402
from hypersyn.arbitrage import (  # noqa: E402
    FORWARD,
    REVERSE,
    TriangleView,
    best_cycle,
    execute_cycle,
    execute_real,
    optimal_volume,
    virtual_reserves_exact,
)
from hypersyn.exchange import ReservePair, apply_trade, quote_input  # noqa: E402
from hypersyn.sim import ScenarioConfig, build, consumer_quote, write_outputs  # noqa: E402
from hypersyn.smt import SparseMerkleTree, proves_absence, proves_presence  # noqa: E402

SCEN = Path(__file__).resolve().parents[1] / "src" / "hypersyn" / "scenarios"
RESULTS: dict[int, str] = {}
NAMES = {
    1: "worked payment",
    2: "constant-product integrity",
    3: "arbitrage closed form vs oracle",
    4: "no-arbitrage fixed point",
    5: "SMT correctness",
    6: "anti-entropy convergence",
    7: "misbehavior containment",
    8: "unidirectional stabilization",
    9: "determinism",
    10: "throughput smoke",
}


def report(n: int, ok: bool, elapsed: float, limit: float, detail: str) -> None:
    ok = ok and elapsed < limit
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {NAMES[n]}: {detail} ({elapsed:.2f}s, limit {limit:g}s)"
    RESULTS[n] = line
    print(line)
    assert ok, line


def report_lines() -> list[str]:
    return [RESULTS.get(n, f"criterion {n:>2} NOT RUN  {NAMES[n]}") for n in sorted(NAMES)]


# -- 1 --------------------------------------------------------------------


def test_c1_worked_payment():
    t = time.perf_counter()
    res = ReservePair(80, 125)
    d_in = quote_input(res, 25)
    after, out = apply_trade(res, d_in)
    elapsed = time.perf_counter() - t
    ok = d_in == 20 and out == 25 and after == ReservePair(100, 100)
    report(1, ok, elapsed, 0.001, f"input {d_in}, output {out}, reserves {tuple(after)}")


# -- 2 --------------------------------------------------------------------


def test_c2_constant_product():
    rng = random.Random(2002)
    t = time.perf_counter()
    edges = [ReservePair(rng.randint(1, 10**9), rng.randint(1, 10**9)) for _ in range(1000)]
    violations = exact = mismatches = 0
    for i in range(10**5):
        j = i % len(edges)
        flipped = rng.random() < 0.5
        res = edges[j].flipped() if flipped else edges[j]
        if i % 10 == 0:
            # force an exact division: (r_a + d) = r_a * q divides d * r_b when q divides r_b
            q = rng.randint(2, 9)
            res = ReservePair(res.r_a, res.r_b - res.r_b % q + q)
            d = res.r_a * (q - 1)
        else:
            d = rng.randint(0, min(2 * res.r_a, 10**12))
        new, out = apply_trade(res, d)
        if out != oracles.quote_output(res.r_a, res.r_b, d):
            mismatches += 1
        if new.product < res.product:
            violations += 1
        if (d * res.r_b) % (res.r_a + d) == 0:
            exact += 1
            if new.product != res.product:
                violations += 1
        edges[j] = new.flipped() if flipped else new
    elapsed = time.perf_counter() - t
    report(2, violations == 0 and mismatches == 0, elapsed, 10,
           f"10^5 trades, {violations} violations, {mismatches} oracle mismatches, {exact} exact divisions")


# -- 3 --------------------------------------------------------------------


def _legs(view, start, direction):
    ov = view.oriented(start, direction)
    return [(l.r_a, l.r_b) for l in ov.legs()], ov


def _ternary_argmax(legs, hi: Decimal, iters: int = 130) -> Decimal:
    """Ternary search on out(d) - d in 50-digit decimals."""
    lo = Decimal(0)
    third = Decimal(1) / 3
    for _ in range(iters):
        m1 = lo + (hi - lo) * third
        m2 = hi - (hi - lo) * third
        if oracles.cycle_out_real(legs, m1) - m1 < oracles.cycle_out_real(legs, m2) - m2:
            lo = m1
        else:
            hi = m2
    return (lo + hi) / 2


def test_c3_arbitrage_closed_form():
    from decimal import localcontext

    rng = random.Random(3003)
    t = time.perf_counter()
    worst = 0.0
    bad_delta = bad_int = declined = 0
    with localcontext() as ctx:
        ctx.prec = 50
        for _ in range(10**4):
            r = [int(10 ** rng.uniform(3, 9)) for _ in range(6)]
            view = TriangleView("i", "j", "k", *r)
            rate = Decimal(1)
            legs_f, _ = _legs(view, "i", FORWARD)
            for a, b in legs_f:
                rate *= Decimal(b) / Decimal(a)
            if rate == 1:
                continue
            direction = FORWARD if rate > 1 else REVERSE
            legs, ov = _legs(view, "i", direction)
            delta = optimal_volume(*virtual_reserves_exact(ov))
            ref = float(_ternary_argmax(legs, Decimal(max(max(l) for l in legs))))
            err = abs(delta - ref) / ref
            worst = max(worst, err)
            if err > 1e-6:
                bad_delta += 1
            plan = best_cycle(view, "i")
            if plan is None:
                # declining is only right when neither neighbour of the real optimum pays
                declined += 1
                pl = [(x.r_a, x.r_b) for x in ov.legs()]
                if any(oracles.integer_profit(pl, d) > 0 for d in {max(1, math.floor(delta)), max(1, math.ceil(delta))}):
                    bad_int += 1
                continue
            pl = [(x.r_a, x.r_b) for x in plan.legs]
            p = oracles.integer_profit(pl, plan.delta_in)
            if p != plan.expected_profit or p < oracles.integer_profit(pl, plan.delta_in + 1):
                bad_int += 1
            if plan.delta_in > 1 and p < oracles.integer_profit(pl, plan.delta_in - 1):
                bad_int += 1
            if plan.delta_in == 1 and p < 0:
                bad_int += 1
    elapsed = time.perf_counter() - t
    report(3, bad_delta == 0 and bad_int == 0, elapsed, 30,
           f"10^4 triangles, worst relative error {worst:.2e}, {bad_delta} over 1e-6, "
           f"{bad_int} integer-neighbour violations, {declined} unprofitable after rounding")


# -- 4 --------------------------------------------------------------------


def _view_after(view, plan):
    new_legs, _ = execute_cycle(plan.legs, plan)
    ov = view.oriented(plan.start, plan.direction)
    return TriangleView(ov.i, ov.j, ov.k, new_legs[0].r_a, new_legs[0].r_b, new_legs[1].r_a, new_legs[1].r_b,
                        new_legs[2].r_a, new_legs[2].r_b)


def _residual(view) -> int:
    """Best integer cycle profit left in any orientation (independent oracle)."""
    best = 0
    for start in (view.i, view.j, view.k):
        for direction in (FORWARD, REVERSE):
            legs = [(x.r_a, x.r_b) for x in view.oriented(start, direction).legs()]
            best = max(best, oracles.max_integer_profit(legs))
    return best


def test_c4_fixed_point():
    rng = random.Random(4004)
    t = time.perf_counter()
    worst_real = 0.0
    residual = executed = after_first = 0
    rounds_max = 0
    for _ in range(10**3):
        r = [int(10 ** rng.uniform(4, 8)) for _ in range(6)]
        view = TriangleView("i", "j", "k", *r)
        for direction in (FORWARD, REVERSE):
            ov = view.oriented("i", direction)
            delta = optimal_volume(*virtual_reserves_exact(ov))
            if delta > 0:
                after = execute_real(ov, delta)
                again = max(optimal_volume(*virtual_reserves_exact(after.oriented("i", d))) for d in (FORWARD, REVERSE))
                worst_real = max(worst_real, again / min(r))
        plan = best_cycle(view, "i")
        if plan is None:
            continue
        executed += 1
        view = _view_after(view, plan)
        first = _residual(view)
        after_first += first > 0
        # later rounds: any of the three nodes may still find a cycle
        rounds = 1
        while rounds < 10:
            plans = [p for s in (view.i, view.j, view.k) if (p := best_cycle(view, s)) is not None]
            if not plans:
                break
            view = _view_after(view, max(plans, key=lambda p: p.expected_profit))
            rounds += 1
        rounds_max = max(rounds_max, rounds)
        residual = max(residual, first if rounds == 1 else _residual(view))
    elapsed = time.perf_counter() - t
    report(4, worst_real <= 1e-6 and residual == 0, elapsed, 10,
           f"10^3 triangles, worst real residual delta {worst_real:.2e} of reserves; {executed} integer executions, "
           f"max residual integer profit {residual} after at most {rounds_max} rounds "
           f"({after_first} had residual after the first)")


# -- 5 --------------------------------------------------------------------


def _top_key(i: int) -> bytes:
    return (i << 253).to_bytes(32, "big")


def test_c5_smt():
    rng = random.Random(5005)
    t = time.perf_counter()
    failures = []
    items = [(rng.randbytes(32), rng.randbytes(32)) for _ in range(64)]
    want = oracles.smt_root(dict(items))
    for _ in range(10**3):
        rng.shuffle(items)
        if SparseMerkleTree(items).root != want:
            failures.append("order")
            break
    # every subset of an 8-key space, every key probed
    space = [_top_key(i) for i in range(8)]
    for mask in range(256):
        present = {k: oracles.sha(k) for i, k in enumerate(space) if mask >> i & 1}
        tree = SparseMerkleTree(present.items())
        for k in space:
            p = tree.prove(k)
            pres, absn = proves_presence(tree.root, k, None, p), proves_absence(tree.root, k, p)
            if (pres, absn) != (k in present, k not in present):
                failures.append(f"proof mask={mask}")
    # insert / delete fuzz against a dict model
    tree, model = SparseMerkleTree(), {}
    pool = [rng.randbytes(32) for _ in range(300)]
    for i in range(10**4):
        k = rng.choice(pool)
        if k in model and rng.random() < 0.5:
            before = tree.root
            v = model.pop(k)
            tree.delete(k)
            tree.insert(k, v)
            model[k] = v
            if tree.root != before:
                failures.append("delete-insert")
            tree.delete(k)
            del model[k]
        elif k not in model:
            before = tree.root
            v = rng.randbytes(32)
            tree.insert(k, v)
            tree.delete(k)
            if tree.root != before:
                failures.append("insert-delete")
            tree.insert(k, v)
            model[k] = v
        if i % 1000 == 0 and tree.root != oracles.smt_root(model):
            failures.append("model")
    if tree.root != oracles.smt_root(model):
        failures.append("final")
    elapsed = time.perf_counter() - t
    report(5, not failures, elapsed, 20,
           f"10^3 permutations, 256 exhaustive 8-key trees, 10^4 fuzz ops; failures {failures[:3]}")


# -- 6 and 10 share one 100-node run ---------------------------------------


class _Counting:
    def __init__(self, fn):
        self.fn, self.calls = fn, 0

    def __call__(self, *a, **k):
        self.calls += 1
        return self.fn(*a, **k)


def run_random100():
    signer = _Counting(node_mod.sign_root)
    hasher = _Counting(smt_mod.hash)
    node_mod.sign_root, smt_mod.hash = signer, hasher
    try:
        cfg = ScenarioConfig.load(SCEN / "random100.yaml")
        t = time.perf_counter()
        world = build(cfg)
        base_sigs, base_hashes = signer.calls, hasher.calls
        base_batches = sum(n.m for n in world.nodes.values())
        world.finish()
        elapsed = time.perf_counter() - t
    finally:
        node_mod.sign_root, smt_mod.hash = signer.fn, hasher.fn
    batches = sum(n.m for n in world.nodes.values()) - base_batches
    return world, elapsed, signer.calls - base_sigs, hasher.calls - base_hashes, batches


@pytest.fixture(scope="module")
def random100():
    return run_random100()


def test_c6_anti_entropy(random100):
    world, elapsed, _, _, _ = random100
    bad = world.replica_mismatches()
    checked = sum(len(n.edges) for n in world.honest())
    report(6, not bad and world.pending() == 0 and world.payments == 10**4, elapsed, 60,
           f"{len(world.nodes)} nodes, {world.payments} payments, {checked} replicas checked, {len(bad)} mismatches")


def test_c10_throughput(random100):
    world, elapsed, sigs, hashes, batches = random100
    edges = world.graph.number_of_edges()
    # each counter value is signed exactly once: one signature per batch
    per_payment = hashes / max(world.payments, 1)
    depth = max(max(n.tree.depths().values(), default=0) for n in world.nodes.values())
    logE = math.log2(max(edges, 2))
    ok = world.payments >= 10**4 and sigs == batches and depth <= 4 * logE
    report(10, ok, elapsed, 60,
           f"{world.payments} payments over {len(world.nodes)} nodes / {edges} edges; "
           f"{sigs} signatures for {batches} state batches; max tree depth {depth} (log2 E = {logE:.1f}); "
           f"{per_payment:.0f} tree hashes per payment including sync and arbitrage")


# -- 7 --------------------------------------------------------------------

ADVERSARIES = ("adversary_equivocator", "adversary_malicious_deleter", "adversary_stale_file_replayer")


def test_c7_containment():
    details, ok, slowest = [], True, 0.0
    for name in ADVERSARIES:
        cfg = ScenarioConfig.load(SCEN / f"{name}.yaml")
        t = time.perf_counter()
        world = build(cfg)
        world.finish()
        elapsed = time.perf_counter() - t
        slowest = max(slowest, elapsed)
        adv = world.node(cfg.adversaries[0].node).address
        c = world.containment(adv)
        down = world.dht_downgrades()
        good = not c["residual"] and c["first_detection"] is not None and c["max_hops"] <= c["bound"] and down == 0
        ok &= good
        details.append(f"{name.split('_', 1)[1]}: residual {len(c['residual'])}, hops {c['max_hops']}/{c['bound']}, "
                       f"downgrades {down}, {elapsed:.1f}s")
    report(7, ok, slowest, 30, "; ".join(details))


# -- 8 --------------------------------------------------------------------


def _unidirectional(name):
    cfg = ScenarioConfig.load(SCEN / f"{name}.yaml")
    world = build(cfg)
    trade = cfg.trades[0]
    payer, receiver, price = trade.nodes[0], trade.nodes[1], trade.price[0]
    q0 = consumer_quote(world, payer, receiver, price)
    world.finish()
    q1 = consumer_quote(world, payer, receiver, price)
    return world, q0, q1


def test_c8_unidirectional():
    t = time.perf_counter()
    w_arb, a0, a1 = _unidirectional("unidirectional")
    w_no, b0, b1 = _unidirectional("unidirectional_noarb")
    elapsed = time.perf_counter() - t
    ok = w_arb.payments == w_no.payments == 10**3 and a1 <= 2 * a0 and b1 > 10 * b0
    report(8, ok, elapsed, 60,
           f"with arbitrage {a0} -> {a1} ({a1 / a0:.3f}x); without {b0} -> {b1} ({b1 / b0:.1f}x)")


# -- 9 --------------------------------------------------------------------


def test_c9_determinism(tmp_path):
    t = time.perf_counter()
    same, details = True, []
    for name in ("triangle", "adversary_equivocator"):
        blobs = []
        for i in range(2):
            world = build(ScenarioConfig.load(SCEN / f"{name}.yaml"))
            world.finish()
            out = tmp_path / f"{name}{i}"
            write_outputs(world, out)
            blobs.append((out / "metrics.jsonl").read_bytes())
        same &= blobs[0] == blobs[1] and len(blobs[0]) > 0
        details.append(f"{name}: {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")
    elapsed = time.perf_counter() - t
    report(9, same, elapsed, 120, "; ".join(details))


if __name__ == "__main__":
    import tempfile

    fns = [test_c1_worked_payment, test_c2_constant_product, test_c3_arbitrage_closed_form, test_c4_fixed_point,
           test_c5_smt, test_c7_containment, test_c8_unidirectional]
    for fn in fns:
        try:
            fn()
        except AssertionError:
            pass
    with tempfile.TemporaryDirectory() as d:
        try:
            test_c9_determinism(Path(d))
        except AssertionError:
            pass
    run = run_random100()
    for fn in (test_c6_anti_entropy, test_c10_throughput):
        try:
            fn(run)
        except AssertionError:
            pass
    print()
    print("\n".join(report_lines()))
