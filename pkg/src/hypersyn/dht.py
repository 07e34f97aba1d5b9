"""Kademlia-style DHT holding signed, counter-gated node discovery files.

Files live at the nodes closest (XOR metric) to the owner's id, not at a
content hash, and are only replaced by a validly signed file with a larger
counter. Anyone who can show a fresh edge with the owner may extend a file's
lifetime without changing its content.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

from . import crypto
from .crypto import Digest
from .errors import InvalidEvidence, InvalidSignature, PeerUnreachable, StaleCounter, StaleEvidence
from .messages import Ack, EdgeProofReply, EdgeProofRequest
from .smt import MerkleProof
from .state import U64_MAX, EdgeState, EdgeStatement, SignedRoot

log = logging.getLogger(__name__)

ID_BITS = 256


@dataclass(frozen=True)
class HypersynFile:
    node_id: Digest
    public: bytes
    root: Digest
    m: int
    sig: bytes
    peers: tuple = ()  # (node_id, network address)

    def signed_root(self) -> SignedRoot:
        return SignedRoot(self.public, self.root, self.m, self.sig)

    def verify(self) -> bool:
        if crypto.hash(self.public) != self.node_id or not 0 <= self.m <= U64_MAX:
            return False
        ids = [p[0] for p in self.peers]
        if len(ids) != len(set(ids)):
            return False
        return crypto.verify(self.public, crypto.state_message(self.root, self.m), self.sig)

    def encode(self) -> bytes:
        entries = [crypto.encode_fields(pid, addr) for pid, addr in self.peers]
        return crypto.encode_fields(self.node_id, self.public, self.root, self.m, self.sig, len(self.peers), *entries)

    @classmethod
    def decode(cls, data: bytes) -> "HypersynFile":
        fields = _split_fields(data)
        node_id, public, root, m, sig, count = fields[:6]
        n = int.from_bytes(count, "big")
        entries = fields[6:]
        if len(entries) != n:
            raise ValueError("peer count does not match entries")
        peers = []
        for raw in entries:
            pid, addr = _split_fields(raw)
            peers.append((pid, addr.decode()))
        return cls(node_id, public, root, int.from_bytes(m, "big"), sig, tuple(peers))

    @classmethod
    def of(cls, signed: SignedRoot, peers) -> "HypersynFile":
        dedup = {}
        for pid, addr in peers:
            dedup.setdefault(pid, addr)
        return cls(signed.address, signed.public, signed.root, signed.m, signed.sig, tuple(sorted(dedup.items())))


def _split_fields(data: bytes) -> list[bytes]:
    out, i = [], 0
    while i < len(data):
        if i + 4 > len(data):
            raise ValueError("truncated field header")
        n = int.from_bytes(data[i : i + 4], "big")
        i += 4
        if i + n > len(data):
            raise ValueError("truncated field")
        out.append(data[i : i + n])
        i += n
    return out


def distance(a: Digest, b: Digest) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


@dataclass
class DhtParams:
    k: int = 20
    alpha: int = 3
    replicas: int = 3
    ttl: int = 10_000
    v: int = 50


class RoutingTable:
    """256 buckets indexed by shared-prefix length with the local id."""

    def __init__(self, self_id: Digest, k: int = 20):
        self.self_id = self_id
        self.k = k
        self.buckets: list[list[list]] = [[] for _ in range(ID_BITS)]

    def bucket_index(self, node_id: Digest) -> int:
        d = distance(self.self_id, node_id)
        return ID_BITS - d.bit_length()

    def update(self, node_id: Digest, address: str = "", now: int = 0) -> None:
        if node_id == self.self_id:
            return
        bucket = self.buckets[self.bucket_index(node_id)]
        for i, entry in enumerate(bucket):
            if entry[0] == node_id:
                del bucket[i]
                bucket.append([node_id, address or entry[1], now])
                return
        if len(bucket) < self.k:
            bucket.append([node_id, address, now])
        # full buckets keep their long-lived entries

    def remove(self, node_id: Digest) -> None:
        bucket = self.buckets[self.bucket_index(node_id)] if node_id != self.self_id else []
        bucket[:] = [e for e in bucket if e[0] != node_id]

    def entries(self) -> list[tuple[Digest, str]]:
        return [(e[0], e[1]) for b in self.buckets for e in b]

    def closest(self, target: Digest, n: int) -> list[tuple[Digest, str]]:
        return sorted(self.entries(), key=lambda e: distance(e[0], target))[:n]

    def __len__(self) -> int:
        return sum(len(b) for b in self.buckets)


@dataclass(frozen=True)
class FindNode:
    target: Digest


@dataclass(frozen=True)
class FindValue:
    target: Digest


@dataclass(frozen=True)
class Nodes:
    entries: tuple
    file: Optional[HypersynFile] = None


@dataclass(frozen=True)
class Store:
    file: HypersynFile


@dataclass(frozen=True)
class RefreshEvidence:
    """The owner's own signed root, or the owner's signed statement of an edge with the refresher."""

    signed: SignedRoot
    edge: Optional[EdgeState] = None
    proof: Optional[MerkleProof] = None


@dataclass(frozen=True)
class Refresh:
    node_id: Digest
    evidence: RefreshEvidence


def check_evidence(file: HypersynFile, refresher: Digest, ev: RefreshEvidence, v: int) -> None:
    """Raise unless ``ev`` entitles ``refresher`` to extend ``file``."""
    s = ev.signed
    if s.address != file.node_id or not s.verify():
        raise InvalidEvidence("evidence is not signed by the file owner")
    if ev.edge is None:
        if refresher != file.node_id:
            raise InvalidEvidence("only the owner may refresh without an edge")
        if s.m < file.m:
            raise StaleEvidence("owner signature older than stored file")
        return
    if ev.proof is None or not ev.edge.has(refresher) or not ev.edge.has(file.node_id):
        raise InvalidEvidence("edge does not join refresher and owner")
    if not EdgeStatement(s, ev.proof).proves(ev.edge):
        raise InvalidEvidence("edge proof does not verify")
    if max(s.m, file.m) - ev.edge.counter_of(file.node_id) > v:
        raise StaleEvidence("edge older than the staleness bound")


class DhtNode:
    """One DHT participant; shares its id and transport with a protocol node."""

    def __init__(self, node_id: Digest, net, params: Optional[DhtParams] = None, address: str = ""):
        self.node_id = node_id
        self.address = node_id
        self.network_address = address
        self.net = net
        self.params = params or DhtParams()
        self.table = RoutingTable(node_id, self.params.k)
        self.store: dict[Digest, tuple[HypersynFile, int]] = {}
        self.last_queries = 0
        self.on_equivocation = None  # callback(old_file, new_file)
        self.accepted: list[tuple[Digest, int]] = []

    # -- serving ----------------------------------------------------------

    def handle_rpc(self, src: Digest, msg):
        src_addr = getattr(self.net.nodes.get(src), "network_address", "") if hasattr(self.net, "nodes") else ""
        self.table.update(src, src_addr, self.net.now())
        if isinstance(msg, FindNode):
            return Nodes(tuple(self.table.closest(msg.target, self.params.k)))
        if isinstance(msg, FindValue):
            return Nodes(tuple(self.table.closest(msg.target, self.params.k)), self.get(msg.target))
        if isinstance(msg, Store):
            return self._on_store(msg.file)
        if isinstance(msg, Refresh):
            return self._on_refresh(src, msg)
        raise TypeError(f"unexpected dht rpc {type(msg).__name__}")

    def get(self, node_id: Digest) -> Optional[HypersynFile]:
        item = self.store.get(node_id)
        if item is None:
            return None
        if item[1] < self.net.now():
            del self.store[node_id]
            return None
        return item[0]

    def _on_store(self, file: HypersynFile) -> Ack:
        if not file.verify():
            return Ack(False, "invalid_signature")
        current = self.get(file.node_id)
        if current is not None and file.m <= current.m:
            if file.m == current.m and file.root != current.root and self.on_equivocation is not None:
                self.on_equivocation(current, file)
            return Ack(False, "stale_counter")
        self.store[file.node_id] = (file, self.net.now() + self.params.ttl)
        self.accepted.append((file.node_id, file.m))
        return Ack(True)

    def _on_refresh(self, src: Digest, msg: Refresh) -> Ack:
        current = self.get(msg.node_id)
        if current is None:
            return Ack(False, "not_found")
        try:
            check_evidence(current, src, msg.evidence, self.params.v)
        except (InvalidEvidence, StaleEvidence) as exc:
            return Ack(False, type(exc).__name__)
        self.store[msg.node_id] = (current, self.net.now() + self.params.ttl)
        return Ack(True)

    def expire(self) -> int:
        now = self.net.now()
        dead = [k for k, (_, exp) in self.store.items() if exp < now]
        for k in dead:
            del self.store[k]
        return len(dead)

    # -- client side ------------------------------------------------------

    def bootstrap(self, contacts) -> None:
        for node_id, addr in contacts:
            self.table.update(node_id, addr, self.net.now())
        self.lookup_nodes(self.node_id)

    def _ask(self, peer: Digest, msg):
        try:
            reply = self.net.rpc(self.node_id, peer, msg)
        except PeerUnreachable:
            self.table.remove(peer)
            return None
        self.table.update(peer, "", self.net.now())
        return reply

    def _iterate(self, target: Digest, want_value: bool, stop_after: int):
        """Iterative closest-node search; returns (closest ids, files seen)."""
        short = {nid: addr for nid, addr in self.table.closest(target, self.params.k)}
        queried: set[Digest] = {self.node_id}
        alive: set[Digest] = set()
        files = []
        if want_value and (own := self.get(target)) is not None:
            files.append(own)
        self.last_queries = 0
        while True:
            ranked = sorted(short, key=lambda n: distance(n, target))
            live = [n for n in ranked if n not in queried or n in alive]
            if all(n in queried for n in live[: self.params.k]):
                break
            if (files or not want_value) and all(n in queried for n in live[:stop_after]):
                break
            batch = [n for n in ranked if n not in queried][: self.params.alpha]
            if not batch:
                break
            for peer in batch:
                queried.add(peer)
                self.last_queries += 1
                reply = self._ask(peer, FindValue(target) if want_value else FindNode(target))
                if reply is None:
                    short.pop(peer, None)
                    continue
                alive.add(peer)
                if reply.file is not None and reply.file.node_id == target and reply.file.verify():
                    files.append(reply.file)
                for nid, addr in reply.entries:
                    if nid != self.node_id:
                        short.setdefault(nid, addr)
        ranked = sorted((n for n in short if n in alive), key=lambda n: distance(n, target))
        return ranked, files

    def lookup_nodes(self, target: Digest) -> list[Digest]:
        """Live ids closest to ``target`` (the querying node is considered too)."""
        ranked, _ = self._iterate(target, False, self.params.k)
        ranked = sorted(set(ranked) | {self.node_id}, key=lambda n: distance(n, target))
        return ranked[: self.params.k]

    def lookup(self, node_id: Digest) -> Optional[HypersynFile]:
        """Highest-counter valid file for ``node_id`` among its replicas, or None."""
        _, files = self._iterate(node_id, True, self.params.replicas)
        valid = [f for f in files if f.verify()]
        if not valid:
            return None
        return max(valid, key=lambda f: (f.m, f.root))

    def publish(self, file: HypersynFile) -> set[Digest]:
        """Store ``file`` on the R closest nodes; returns the ids that accepted it."""
        if not file.verify():
            raise InvalidSignature("file signature does not verify")
        holders = self.lookup_nodes(file.node_id)[: self.params.replicas]
        stored, stale = set(), 0
        for h in holders:
            if h == self.node_id:
                ack = self._on_store(file)
            else:
                ack = self._ask(h, Store(file))
            if ack is None:
                continue
            if ack.ok:
                stored.add(h)
            elif ack.error == "stale_counter":
                stale += 1
        if not stored and stale:
            raise StaleCounter(f"stored file already has counter >= {file.m}")
        return stored

    def refresh(self, file_id: Digest, evidence: RefreshEvidence) -> bool:
        holders = self.lookup_nodes(file_id)[: self.params.replicas]
        reasons = []
        accepted = False
        for h in holders:
            if h == self.node_id:
                ack = self._on_refresh(self.node_id, Refresh(file_id, evidence))
            else:
                ack = self._ask(h, Refresh(file_id, evidence))
            if ack is None:
                continue
            accepted |= ack.ok
            if not ack.ok:
                reasons.append(ack.error)
        if not accepted and "StaleEvidence" in reasons:
            raise StaleEvidence("edge evidence too old")
        if not accepted and "InvalidEvidence" in reasons:
            raise InvalidEvidence("evidence rejected")
        return accepted

    def validate_peer_entry(self, file: HypersynFile, entry) -> bool:
        """Ask a listed peer to prove, under its signed root, its edge with the file owner."""
        peer_id = entry[0]
        try:
            reply = self.net.rpc(self.node_id, peer_id, EdgeProofRequest(file.node_id))
        except PeerUnreachable:
            return False
        return entry_proof_ok(file, peer_id, reply)


def entry_proof_ok(file: HypersynFile, peer_id: Digest, reply) -> bool:
    if not isinstance(reply, EdgeProofReply) or reply.edge is None:
        return False
    if reply.signed.address != peer_id:
        return False
    edge = reply.edge
    if not (edge.has(peer_id) and edge.has(file.node_id)):
        return False
    return EdgeStatement(reply.signed, reply.proof).proves(edge)


DhtMessage = Union[FindNode, FindValue, Nodes, Store, Refresh]
