"""Golden conformance fixtures: loading and re-validation against the library."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from . import crypto
from .arbitrage import TriangleView, best_cycle
from .dht import HypersynFile
from .exchange import ReservePair, quote_input, quote_output
from .smt import MerkleProof, SparseMerkleTree, proves_absence, proves_presence
from .state import EdgeState, edge_hash

FIXTURE_DIR = Path(__file__).parent / "fixtures"
CATEGORIES = ("hash", "smt", "exchange", "arbitrage", "edge_hash", "file_encoding")


def _hex(s: str) -> bytes:
    return bytes.fromhex(s)


def check_case(category: str, case: dict) -> Optional[str]:
    """None when the library reproduces ``case``, else a short mismatch note."""
    if category == "hash":
        if "signature_hex" in case:
            kp = crypto.keygen(_hex(case["seed_hex"]))
            msg = _hex(case["message_hex"])
            if kp.public.hex() != case["public_hex"]:
                return "public key differs"
            if crypto.sign(kp, msg).hex() != case["signature_hex"]:
                return "signature differs"
            return None if crypto.verify(kp.public, msg, _hex(case["signature_hex"])) else "signature rejected"
        return None if crypto.check_vector(case) else "digest differs"
    if category == "smt":
        tree = SparseMerkleTree((_hex(k), _hex(v)) for k, v in case["items"])
        if tree.root.hex() != case["root_hex"]:
            return "root differs"
        for p in case.get("proofs", []):
            proof = MerkleProof.from_bytes(_hex(p["proof_hex"]))
            key = _hex(p["key"])
            if tree.prove(key).to_bytes().hex() != p["proof_hex"]:
                return f"proof bytes differ for {p['key'][:8]}"
            present = proves_presence(tree.root, key, None, proof)
            absent = proves_absence(tree.root, key, proof)
            if (present, absent) != (p["kind"] == "presence", p["kind"] == "absence"):
                return f"proof kind mismatch for {p['key'][:8]}"
        return None
    if category == "exchange":
        res = ReservePair(case["r_a"], case["r_b"])
        if "in_amount" in case and "out_expected" in case:
            got = quote_output(res, case["in_amount"])
            return None if got == case["out_expected"] else f"quote_output {got} != {case['out_expected']}"
        got = quote_input(res, case["out_amount"])
        return None if got == case["in_expected"] else f"quote_input {got} != {case['in_expected']}"
    if category == "arbitrage":
        view = TriangleView("i", "j", "k", *case["reserves"])
        plan = best_cycle(view, case["start"])
        if case["direction"] is None:
            return None if plan is None else "expected no cycle"
        if plan is None:
            return "expected a cycle"
        if (plan.direction, plan.delta_in, plan.expected_profit) != (case["direction"], case["delta_in"], case["profit"]):
            return f"plan {plan.direction}/{plan.delta_in}/{plan.expected_profit}"
        if abs(plan.real_delta - case["real_delta"]) > 1e-6 * max(1.0, abs(case["real_delta"])):
            return f"real delta {plan.real_delta} vs {case['real_delta']}"
        return None
    if category == "edge_hash":
        f = case["edge"]
        e = EdgeState(_hex(f["p_lo"]), _hex(f["p_hi"]), f["r_lo"], f["r_hi"], f["m_lo"], f["m_hi"])
        return None if edge_hash(e).hex() == case["digest_hex"] else "edge digest differs"
    if category == "file_encoding":
        f = case["file"]
        hf = HypersynFile(
            _hex(f["node_id"]), _hex(f["public"]), _hex(f["root"]), f["m"], _hex(f["sig"]),
            tuple((_hex(pid), addr) for pid, addr in f["peers"]),
        )
        if hf.encode().hex() != case["encoding_hex"]:
            return "encoding differs"
        if HypersynFile.decode(hf.encode()) != hf:
            return "decode does not round-trip"
        if hf.verify() != case["valid"]:
            return "signature validity differs"
        return None
    return f"unknown category {category}"


def load(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def check_all(root: Path = FIXTURE_DIR) -> list[tuple[str, int, list[str]]]:
    """(file, number of cases, failures) for every fixture file under ``root``."""
    results = []
    for category in CATEGORIES:
        for path in sorted((Path(root) / category).glob("*.json")):
            data = load(path)
            failures = []
            for i, case in enumerate(data["cases"]):
                try:
                    err = check_case(category, case)
                except Exception as exc:  # a malformed case is a failure, not a crash
                    err = f"{type(exc).__name__}: {exc}"
                if err is not None:
                    failures.append(f"case {i}: {err}")
            results.append((f"{category}/{path.name}", len(data["cases"]), failures))
    return results
