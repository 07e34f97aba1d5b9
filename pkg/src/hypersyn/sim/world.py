"""Deterministic discrete-event world hosting nodes, the DHT and a synthetic network."""

from __future__ import annotations

import hashlib
import logging
import random
from typing import Optional

import networkx as nx

from ..errors import HypersynError
from ..exchange import quote_input
from ..network import LocalNetwork
from ..node import Node, ProtocolParams
from . import adversary
from .config import ScenarioConfig

log = logging.getLogger(__name__)


class World(LocalNetwork):
    def __init__(self, config: ScenarioConfig):
        super().__init__()
        self.config = config
        self.record_events = True
        self.rng = random.Random(config.seed)
        self._net_rng = self.substream("network")
        self._trade_rng = self.substream("trades")
        self.by_name: dict[str, Node] = {}
        self.names: dict[bytes, str] = {}
        self.graph = nx.Graph()
        self.adversaries: dict[bytes, str] = {}
        self.samples: list[dict] = []
        self.payments = 0
        self.failed_payments = 0
        self._published_m: dict[bytes, int] = {}
        self._setup = False  # initial edges and DHT bootstrap happen at tick 0

    def substream(self, label: str) -> random.Random:
        """Independent generator per component, derived from the scenario seed."""
        h = hashlib.sha256(f"{self.config.seed}:{label}".encode()).digest()
        return random.Random(int.from_bytes(h[:8], "big"))

    # -- network model -----------------------------------------------------

    def reachable(self, src: bytes, dst: bytes) -> bool:
        if not super().reachable(src, dst):
            return False
        for start, end, groups in self.config.network.partitions:
            if start <= self.clock < end:
                gs = self.names.get(src), self.names.get(dst)
                side = [next((i for i, g in enumerate(groups) if n in g), -1) for n in gs]
                if side[0] != side[1]:
                    return False
        return True

    def lost(self, src: bytes, dst: bytes, msg) -> bool:
        if super().lost(src, dst, msg):
            return True
        p = self.config.network.drop
        return p > 0 and self._net_rng.random() < p

    def message_delay(self, src: bytes, dst: bytes) -> int:
        if self._setup:
            return 0
        lo, hi = self.config.network.delay
        return lo if lo == hi else self._net_rng.randint(lo, hi)

    # -- observability ----------------------------------------------------

    def label(self, value):
        if isinstance(value, bytes):
            return self.names.get(value, value.hex()[:16])
        if isinstance(value, (list, tuple, set, frozenset)):
            return [self.label(v) for v in value]
        return value

    def record(self, kind: str, /, **payload) -> None:
        if self.record_events:
            self.events.append({"tick": self.clock, "type": kind, **{k: self.label(v) for k, v in payload.items()}})

    def node(self, name: str) -> Node:
        return self.by_name[name]

    def honest(self) -> list[Node]:
        return [n for a, n in self.nodes.items() if a not in self.adversaries]

    # -- scheduled activity -------------------------------------------------

    def _schedule_trades(self) -> None:
        for i, spec in enumerate(self.config.trades):
            if spec.count > 0:
                self.schedule(spec.start, self._trade, spec, 0)

    def _trade(self, spec, i: int) -> None:
        rng = self._trade_rng
        if spec.kind == "fixed":
            payer, receiver = self.by_name[spec.payer], self.by_name[spec.receiver].address
        elif spec.kind == "cycle":
            n = len(spec.nodes)
            payer = self.by_name[spec.nodes[i % n]]
            receiver = self.by_name[spec.nodes[(i + 1) % n]].address
        else:
            candidates = [n for n in self.honest() if n.edges]
            payer = candidates[rng.randrange(len(candidates))] if candidates else None
            peers = sorted(payer.edges) if payer else []
            receiver = peers[rng.randrange(len(peers))] if peers else None
        lo, hi = spec.price
        price = lo if lo == hi else rng.randint(lo, hi)
        if payer is not None and receiver is not None:
            try:
                payer.pay(receiver, price)
                self.payments += 1
            except HypersynError as exc:
                self.failed_payments += 1
                self.record("payment_failed", payer=payer.address, receiver=receiver, error=type(exc).__name__)
        if i + 1 < spec.count:
            self.schedule(self.clock + spec.every, self._trade, spec, i + 1)

    def _maintain(self, node: Node) -> None:
        if node.address in self.adversaries and node.address in node.punished:
            return
        for peer in sorted(node.edges):
            rep = node.replicas.get(peer)
            meta = node.peer_meta.get(peer)
            try:
                if rep is None or meta is None or meta.synced is None or rep._stale:
                    node.sync_with_peer(peer)
                else:
                    node.ensure_synced(peer)
            except HypersynError as exc:
                self.record("sync_failed", node=node.address, peer=peer, error=type(exc).__name__)
        node.prune_stale()
        if node.dht is not None and self._published_m.get(node.address) != node.m:
            try:
                node.publish_file()
                self._published_m[node.address] = node.m
            except HypersynError as exc:
                self.record("publish_failed", node=node.address, error=type(exc).__name__)
        nxt = self.clock + self.config.sync_interval
        if nxt <= self.config.horizon:
            self.schedule(nxt, self._maintain, node)

    def _sample(self) -> None:
        self.samples.extend(edge_rows(self))
        nxt = self.clock + self.config.sample_interval
        if nxt <= self.config.horizon:
            self.schedule(nxt, self._sample)

    def run_until(self, until: Optional[int] = None) -> "World":
        """Process every event with time <= ``until`` (default: the horizon)."""
        until = self.config.horizon if until is None else until
        if until < self.clock:
            raise ValueError("cannot run backwards")
        self.run(until)
        return self

    def finish(self) -> "World":
        """Run to the horizon, then drain in-flight messages (quiescence)."""
        self.run_until(self.config.horizon)
        if self.config.drain:
            self.run()
        self.samples.extend(edge_rows(self))
        return self

    # -- checks -----------------------------------------------------------

    def replica_mismatches(self) -> list[tuple[str, str]]:
        bad = []
        for node in self.honest():
            for peer in sorted(node.edges):
                other = self.nodes[peer]
                if peer in self.adversaries:
                    continue
                if not node.replica_in_sync(other):
                    bad.append((self.names[node.address], self.names[peer]))
        return bad

    def residual_edges(self, adversary_addr: bytes) -> list[str]:
        return [self.names[n.address] for n in self.honest() if adversary_addr in n.edges]

    def containment(self, adversary_addr: bytes) -> dict:
        """When the adversary was first caught and how many broadcast hops it took to isolate it."""
        name = self.names[adversary_addr]
        detected = [e["tick"] for e in self.events if e["type"] == "misbehavior_detected" and name in e["implicated"]]
        drops = [e for e in self.events if e["type"] == "punish" and name in e["dropped"]]
        return {
            "residual": self.residual_edges(adversary_addr),
            "first_detection": min(detected) if detected else None,
            "max_hops": max((e["hops"] for e in drops), default=0),
            "bound": self.diameter() + 1,
        }

    def dht_downgrades(self) -> int:
        """Count stores that replaced a file with an equal or lower counter (should be zero)."""
        bad = 0
        for node in self.nodes.values():
            if node.dht is None:
                continue
            last: dict[bytes, int] = {}
            for node_id, m in node.dht.accepted:
                if node_id in last and m <= last[node_id]:
                    bad += 1
                last[node_id] = m
        return bad

    def diameter(self) -> int:
        if self.graph.number_of_nodes() == 0 or not nx.is_connected(self.graph):
            return 0
        return nx.diameter(self.graph)


def edge_rows(world: World) -> list[dict]:
    rows, seen = [], set()
    for addr in sorted(world.nodes):
        node = world.nodes[addr]
        for peer, e in sorted(node.edges.items()):
            if e.key in seen:
                continue
            seen.add(e.key)
            lo, hi = world.names[e.p_lo], world.names[e.p_hi]
            rows.append({
                "tick": world.clock, "lo": lo, "hi": hi, "r_lo": e.r_lo, "r_hi": e.r_hi,
                "ratio": f"{e.r_lo / e.r_hi:.9f}", "m_lo": e.m_lo, "m_hi": e.m_hi,
            })
    rows.sort(key=lambda r: (r["lo"], r["hi"]))
    return rows


def build(config: ScenarioConfig) -> World:
    """Create nodes, open initial edges, bootstrap the DHT and schedule activity."""
    w = World(config)
    params = ProtocolParams(
        v=config.v,
        arbitrage_rounds=config.arbitrage_rounds if config.arbitrage else 0,
        sync_interval=config.sync_interval,
        initial_reserve=config.reserves,
        unreachable_ticks=config.unreachable_ticks,
        mint_cap=config.mint_cap,
    )
    record, w.record_events = w.record_events, False
    w._setup = True
    for spec in config.nodes:
        node = Node(spec.seed, w, params, network_address=spec.name)
        w.by_name[spec.name] = node
        w.names[node.address] = spec.name
        w.graph.add_node(spec.name)
    ordered = [w.by_name[s.name] for s in config.nodes]
    if config.dht:
        for n in ordered:
            n.attach_dht().params.ttl = config.dht_ttl
        contacts = [(ordered[0].address, ordered[0].network_address)] if ordered else []
        for n in ordered:
            n.dht.bootstrap(contacts)
    pairs = []
    if config.random_graph is not None:
        g = nx.random_regular_graph(config.random_graph["degree"], len(ordered), seed=config.random_graph["seed"])
        for u, v in sorted(tuple(sorted(e)) for e in g.edges()):
            pairs.append((ordered[u].network_address, ordered[v].network_address, None, None, None))
    for e in config.edges:
        pairs.append((e.a, e.b, e.r_a, e.r_b, e.via))
    for a, b, r_a, r_b, via in pairs:
        na, nb = w.by_name[a], w.by_name[b]
        if via is not None:
            na.open_edge_common(nb.address, w.by_name[via].address)
        else:
            na.open_edge_negotiated(nb.address, r_a or config.reserves, r_b or config.reserves)
        w.graph.add_edge(a, b)
        w.run()
    if config.dht:
        for n in ordered:
            n.publish_file()
            w._published_m[n.address] = n.m
    w.run()
    w.record_events = record
    w._setup = False
    w.record("built", nodes=len(ordered), edges=w.graph.number_of_edges())
    w._schedule_trades()
    for i, n in enumerate(ordered):
        first = 1 + (i % config.sync_interval)
        if first <= config.horizon:
            w.schedule(first, w._maintain, n)
    for spec in config.adversaries:
        adversary.schedule(w, spec)
    if config.sample_interval <= config.horizon:
        w.schedule(config.sample_interval, w._sample)
    return w


def consumer_quote(world: World, payer: str, receiver: str, price: int) -> int:
    e = world.by_name[payer].edges[world.by_name[receiver].address]
    return quote_input(e.reserves_for(world.by_name[payer].address), price)
