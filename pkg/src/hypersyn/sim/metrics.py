"""Metric snapshots and the JSONL / CSV writers."""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

EDGE_COLUMNS = ("tick", "lo", "hi", "r_lo", "r_hi", "ratio", "m_lo", "m_hi")


@dataclass
class MetricsFrame:
    tick: int = 0
    edges: list = field(default_factory=list)
    nodes: dict = field(default_factory=dict)
    messages: dict = field(default_factory=dict)
    payments: int = 0
    failed_payments: int = 0
    arbitrages: int = 0
    arbitrage_volume: int = 0
    arbitrage_profit: int = 0
    misbehavior: list = field(default_factory=list)

    def is_empty(self) -> bool:
        return not (self.edges or self.nodes or self.messages or self.misbehavior)

    def summary(self) -> dict:
        return {
            "tick": self.tick,
            "nodes": len(self.nodes),
            "edges": len(self.edges),
            "payments": self.payments,
            "failed_payments": self.failed_payments,
            "arbitrages": self.arbitrages,
            "arbitrage_volume": self.arbitrage_volume,
            "arbitrage_profit": self.arbitrage_profit,
            "misbehavior_events": len(self.misbehavior),
        }


def snapshot_metrics(world) -> MetricsFrame:
    from .world import edge_rows

    frame = MetricsFrame(tick=world.clock)
    frame.edges = edge_rows(world)
    for addr in sorted(world.nodes):
        n = world.nodes[addr]
        frame.nodes[world.names.get(addr, addr.hex()[:16])] = {"root": n.signed.root.hex(), "m": n.signed.m}
    frame.messages = dict(sorted(Counter(world.counts).items()))
    for ev in world.events:
        t = ev["type"]
        if t == "payment":
            frame.payments += 1
        elif t == "payment_failed":
            frame.failed_payments += 1
        elif t == "arbitrage":
            frame.arbitrages += 1
            frame.arbitrage_volume += ev["delta_in"]
            frame.arbitrage_profit += ev["profit"]
        elif t in ("misbehavior_detected", "dht_replay_rejected", "invalid_proof"):
            frame.misbehavior.append(ev)
    return frame


def _jsonable(v):
    if isinstance(v, bytes):
        return v.hex()
    if isinstance(v, (set, frozenset, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def write_outputs(world, out_dir) -> dict:
    """metrics.jsonl (one event per line), edges.csv and summary.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w") as f:
        for ev in world.events:
            f.write(json.dumps(_jsonable(ev), sort_keys=True, separators=(",", ":")) + "\n")
    with open(out / "edges.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=EDGE_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in world.samples:
            w.writerow(row)
    frame = snapshot_metrics(world)
    summary = frame.summary()
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return summary
