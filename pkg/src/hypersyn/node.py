"""Per-peer protocol state machine.

A :class:`Node` owns a sparse Merkle tree over its edges, a counter that moves
with every signed root, pruned replicas of its peers' trees, and the handlers
for every protocol message. Nodes interact only through a transport (see
:mod:`hypersyn.network`), so the same code runs in unit tests and inside the
simulator.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from . import crypto
from .arbitrage import CyclePlan, TriangleView, best_cycle, execute_cycle, execute_real, optimal_volume, select_initiator, virtual_reserves_exact, FORWARD, REVERSE
from .crypto import Digest
from .dht import DhtNode, DhtParams, HypersynFile, RefreshEvidence
from .errors import (
    CounterpartyTimeout,
    EdgeExists,
    HypersynError,
    InconsistentRemote,
    InsufficientDepth,
    InvalidProof,
    InvalidSignature,
    NoCommonPeer,
    NoEdge,
    PeerUnreachable,
    Refused,
    StaleReserves,
    SyncFailed,
    Unprofitable,
)
from .exchange import ReservePair, quote_input
from .messages import (
    Ack,
    ArbitrageRequest,
    CycleAccept,
    CycleCommit,
    CyclePropose,
    EdgeOpenAccept,
    EdgeOpenCommit,
    EdgeOpenPropose,
    EdgeProofReply,
    EdgeProofRequest,
    JustifyReply,
    JustifyRequest,
    LeafTransfer,
    MisbehaviorBroadcast,
    PaymentAbort,
    PaymentAccept,
    PaymentCommit,
    PaymentPropose,
    PeerChoice,
    StateAnnounce,
    SubtreeDigests,
    SyncRequest,
)
from .misbehavior import (
    FUTURE_COUNTER,
    ROLLBACK,
    SAME_COUNTER,
    Equivocation,
    InconsistentEdge,
    MaliciousDeletion,
    MisbehaviorProof,
    conflicting,
    proof_digest,
)
from .smt import EMPTY, PrunedSMT, SparseMerkleTree
from .state import U64_MAX, EdgeState, EdgeStatement, SignedRoot, edge_key, sign_root

log = logging.getLogger(__name__)

_SNAPSHOTS = 16
_SEEN_ROOTS = 64


@dataclass
class ProtocolParams:
    v: int = 50
    arbitrage_rounds: int = 1
    sync_interval: int = 100
    initial_reserve: int = 10**6
    unreachable_ticks: int = 100
    # experiment knob, not part of the protocol
    mint_cap: Optional[int] = None

    def __post_init__(self):
        if self.v < 1:
            raise ValueError("staleness constant v must be >= 1")
        if self.arbitrage_rounds < 0:
            raise ValueError("arbitrage_rounds must be >= 0")


@dataclass
class PeerMeta:
    network_address: str = ""
    public: bytes = b""
    latest: Optional[SignedRoot] = None
    synced: Optional[SignedRoot] = None
    last_contact: int = 0


@dataclass
class SyncReport:
    peer: Digest
    root: Digest
    m: int
    queries: int = 0
    leaves_transferred: int = 0
    changed: frozenset = frozenset()
    misbehavior: list = field(default_factory=list)


@dataclass
class PaymentReceipt:
    payer: Digest
    receiver: Digest
    price: int
    paid: int
    before: Optional[ReservePair] = None
    after: Optional[ReservePair] = None
    arbitrages: list = field(default_factory=list)


class Transport(Protocol):
    def rpc(self, src: Digest, dst: Digest, msg, reliable: bool = False): ...

    def send(self, src: Digest, dst: Digest, msg) -> None: ...

    def defer(self, addr: Digest, fn: Callable, *args) -> None: ...

    def now(self) -> int: ...


def common_node_reserves(
    a: Digest, b: Digest, c: Digest, e_ac: EdgeState, e_bc: EdgeState, initial: int
) -> tuple[int, int]:
    """Reserves (of a's credit, of b's credit) for a new edge a-b priced through c.

    Starts from an equal temporary edge and lets one real-valued optimal cycle
    over {a, b, c} move it; only the a-b edge result is kept.
    """
    view = TriangleView(
        a, b, c, initial, initial,
        e_bc.reserve_of(b), e_bc.reserve_of(c),
        e_ac.reserve_of(c), e_ac.reserve_of(a),
    )
    for direction in (FORWARD, REVERSE):
        ov = view.oriented(a, direction)
        delta = optimal_volume(*virtual_reserves_exact(ov))
        if delta > 0:
            after = execute_real(ov, delta)
            return max(1, round(after.reserve(a, b))), max(1, round(after.reserve(b, a)))
    return initial, initial


class Node:
    def __init__(self, seed: bytes, net: Transport, params: Optional[ProtocolParams] = None, network_address: str = ""):
        self.keys = crypto.keygen(seed)
        self.address: Digest = self.keys.address
        self.network_address = network_address or self.address.hex()[:16]
        self.params = params or ProtocolParams()
        self.net = net
        self.m = 0
        self._dirty = False
        self.tree = SparseMerkleTree()
        self.edges: dict[Digest, EdgeState] = {}
        self.replicas: dict[Digest, PrunedSMT] = {}
        self.replica_edges: dict[Digest, dict[Digest, EdgeState]] = {}
        self.peer_meta: dict[Digest, PeerMeta] = {}
        self.pending: dict[tuple, tuple] = {}
        self.punished: set[Digest] = set()
        self.held_proofs: dict[Digest, MisbehaviorProof] = {}
        self.proofs_seen: set[Digest] = set()
        self.retained: dict[Digest, tuple[EdgeState, EdgeStatement]] = {}
        self.accept_edge: Callable[[Digest, EdgeOpenPropose], bool] = lambda peer, msg: True
        self.dht = None
        self._snapshots: OrderedDict[Digest, tuple[SparseMerkleTree, dict]] = OrderedDict()
        self._seen_roots: dict[Digest, dict[int, SignedRoot]] = {}
        self._forwarded: set[tuple[Digest, int]] = set()
        self._sync_pending: set[Digest] = set()
        self._changed: dict[Digest, EdgeState] = {}
        self.signed = sign_root(self.keys, EMPTY, 0)
        self._snapshot()
        register = getattr(net, "register", None)
        if register is not None:
            register(self)

    def __repr__(self) -> str:
        return f"Node({self.network_address}, m={self.m}, edges={len(self.edges)})"

    # -- local state ------------------------------------------------------

    @property
    def next_m(self) -> int:
        """Counter the next state change will be signed under."""
        return self.m if self._dirty else self.m + 1

    def _touch(self) -> None:
        if not self._dirty:
            if self.m >= U64_MAX:
                raise OverflowError("node counter exhausted")
            self.m += 1
            self._dirty = True

    def _record(self, kind: str, /, **payload) -> None:
        rec = getattr(self.net, "record", None)
        if rec is not None:
            rec(kind, node=self.address, **payload)

    def sign_state(self) -> SignedRoot:
        """Sign (root, m) once for every change made since the last signature."""
        if self._dirty:
            self.signed = sign_root(self.keys, self.tree.root, self.m)
            self._dirty = False
            self._snapshot()
        return self.signed

    def _snapshot(self) -> None:
        by_key = {e.key: e for e in self.edges.values()}
        self._snapshots[self.signed.root] = (self.tree.copy(), by_key)
        self._snapshots.move_to_end(self.signed.root)
        while len(self._snapshots) > _SNAPSHOTS:
            self._snapshots.popitem(last=False)

    def statement(self, key: Digest) -> EdgeStatement:
        signed = self.sign_state()
        return EdgeStatement(signed, self.tree.prove(key))

    def _scope_for(self, peer: Digest) -> set[Digest]:
        keys = {edge_key(peer, x) for x in self.edges if x != peer}
        keys.add(edge_key(peer, self.address))
        return keys

    def _ensure_replica(self, peer: Digest) -> PrunedSMT:
        rep = self.replicas.get(peer)
        if rep is None:
            rep = PrunedSMT(self._scope_for(peer))
            rep._stale = True
            self.replicas[peer] = rep
            self.replica_edges[peer] = {}
        self.peer_meta.setdefault(peer, PeerMeta())
        return rep

    def _rescope(self) -> None:
        for peer, rep in self.replicas.items():
            rep.set_scope(self._scope_for(peer))

    def _set_edge(self, edge: EdgeState) -> None:
        peer = edge.other(self.address)
        new_peer = peer not in self.edges
        self._touch()
        self.tree.set(edge.key, edge.digest)
        self.edges[peer] = edge
        self._changed[edge.key] = edge
        if new_peer:
            self._ensure_replica(peer)
            self._rescope()

    def _remove_edge(self, peer: Digest) -> EdgeState:
        edge = self.edges.pop(peer)
        self._touch()
        self.tree.delete(edge.key)
        self._changed[edge.key] = None
        self.replicas.pop(peer, None)
        self.replica_edges.pop(peer, None)
        self._rescope()
        self._record("edge_removed", peer=peer)
        return edge

    def _attest_self(self, peer: Digest) -> None:
        edge = self.edges.get(peer)
        if edge is not None:
            self.edges[peer] = edge.attested(self.address, self.statement(edge.key))

    def commit(self) -> SignedRoot:
        """Sign pending changes and announce them to every peer."""
        signed = self.sign_state()
        changed, self._changed = self._changed, {}
        edges = tuple(e for e in changed.values() if e is not None)
        proofs = tuple(self.tree.prove(e.key) for e in edges)
        for peer in sorted(self.edges):
            self.net.send(self.address, peer, StateAnnounce(signed, edges, proofs))
        return signed

    # -- message dispatch -------------------------------------------------

    def handle_rpc(self, src: Digest, msg):
        handler = self._rpc_handlers.get(type(msg).__name__)
        if handler is None:
            if self.dht is not None:
                return self.dht.handle_rpc(src, msg)
            raise TypeError(f"unexpected rpc {type(msg).__name__}")
        return handler(self, src, msg)

    def handle_message(self, src: Digest, msg) -> None:
        if isinstance(msg, StateAnnounce):
            self._on_announce(src, msg)
        elif isinstance(msg, MisbehaviorBroadcast):
            self.handle_misbehavior(msg.proof, hops=msg.hops, src=src)

    # -- observing peers' signed roots -----------------------------------

    def _observe(self, peer: Digest, signed: SignedRoot) -> bool:
        """Record a verified signed root; True when it is the newest seen from ``peer``."""
        if signed.address != peer or not signed.verify():
            raise InvalidSignature(f"bad signed root for {peer.hex()[:8]}")
        seen = self._seen_roots.setdefault(peer, {})
        prev = seen.get(signed.m)
        if prev is not None and prev.root != signed.root:
            self._detected(Equivocation(SAME_COUNTER, prev, EdgeStatement(signed, _empty_proof())))
            return False
        seen[signed.m] = signed
        if len(seen) > _SEEN_ROOTS:
            del seen[min(seen)]
        meta = self.peer_meta.setdefault(peer, PeerMeta())
        meta.public = signed.public
        if meta.latest is None or signed.m > meta.latest.m:
            meta.latest = signed
            return True
        return False

    def _on_announce(self, src: Digest, msg: StateAnnounce) -> None:
        signed = msg.signed
        owner = signed.address
        if owner == self.address or owner in self.punished:
            return
        try:
            newer = self._observe(owner, signed)
        except InvalidSignature:
            self._record("invalid_announce", peer=owner)
            return
        if owner in self.punished:
            return
        if src == owner:
            self.peer_meta[owner].last_contact = self.net.now()
        mine = self.edges.get(owner)
        if mine is not None and src == owner:
            for e, proof in zip(msg.edges, msg.proofs):
                if e.key == mine.key and e.digest == mine.digest:
                    st = EdgeStatement(signed, proof)
                    if st.proves(mine):
                        self.edges[owner] = mine.attested(owner, st)
        current = self.peer_meta[owner].latest
        if owner in self.edges and current is not None and current.m == signed.m:
            rep = self.replicas.get(owner)
            if rep is None or rep._stale or rep.root != signed.root:
                self._request_sync(owner)
        if newer:
            self._forward_root(owner, signed, src)

    def _connected_to(self, x: Digest, owner: Digest) -> bool:
        k = edge_key(x, owner)
        return k in self.replica_edges.get(owner, {}) or k in self.replica_edges.get(x, {})

    def _forward_root(self, owner: Digest, signed: SignedRoot, src: Digest) -> None:
        tag = (owner, signed.m)
        if tag in self._forwarded:
            return
        self._forwarded.add(tag)
        msg = StateAnnounce(signed, origin=self.address)
        for x in sorted(self.edges):
            if x not in (owner, src) and self._connected_to(x, owner):
                self.net.send(self.address, x, msg)

    def _request_sync(self, peer: Digest) -> None:
        if peer in self._sync_pending:
            return
        self._sync_pending.add(peer)
        self.net.defer(self.address, self._deferred_sync, peer)

    def _deferred_sync(self, peer: Digest) -> None:
        self._sync_pending.discard(peer)
        if peer not in self.edges or peer in self.punished:
            return
        try:
            self.sync_with_peer(peer)
        except (PeerUnreachable, SyncFailed, InvalidSignature) as exc:
            self._record("sync_failed", peer=peer, error=type(exc).__name__)

    # -- anti-entropy -----------------------------------------------------

    def sync_with_peer(self, peer: Digest) -> SyncReport:
        """Bring the pruned replica of ``peer`` to its latest signed root."""
        if peer in self.punished:
            raise PeerUnreachable("peer has been punished")
        reply = self.net.rpc(self.address, peer, SyncRequest())
        if not isinstance(reply, StateAnnounce):
            raise SyncFailed("peer did not announce its state")
        signed = reply.signed
        self._observe(peer, signed)
        meta = self.peer_meta[peer]
        report = SyncReport(peer, signed.root, signed.m)
        if peer in self.punished:
            report.misbehavior.append(self.held_proofs.get(peer))
            return report
        if meta.latest is not None and signed.m < meta.latest.m:
            # a replayed older root; keep what we have
            raise SyncFailed("peer served a root older than one it already signed")
        meta.last_contact = self.net.now()
        rep = self._ensure_replica(peer)
        if rep.root == signed.root and not rep._stale:
            meta.synced = signed
            self._attest_from_replica(peer)
            return report
        old_rep = rep.copy()
        old_edges = dict(self.replica_edges[peer])
        old_synced = meta.synced

        def query(depth: int, prefix: int):
            r = self.net.rpc(self.address, peer, SyncRequest(depth, prefix, signed.root))
            return r.info

        try:
            changed, report.queries = rep.sync(signed.root, query)
        except InconsistentRemote as exc:
            raise SyncFailed(str(exc)) from exc
        present = sorted(k for k in changed if rep.get(k) is not None)
        fetched: dict[Digest, EdgeState] = {}
        if present:
            try:
                r = self.net.rpc(self.address, peer, LeafTransfer(keys=tuple(present), root=signed.root))
            except PeerUnreachable:
                self.replicas[peer] = old_rep
                raise
            fetched = {e.key: e for e in r.edges}
            if any(k not in fetched or fetched[k].digest != rep.get(k) for k in present):
                self.replicas[peer] = old_rep
                raise SyncFailed("leaf transfer does not match committed values")
        report.leaves_transferred = len(present)
        report.changed = frozenset(changed)
        edges_map = self.replica_edges[peer]
        for k in changed:
            if k in fetched:
                edges_map[k] = fetched[k]
            else:
                edges_map.pop(k, None)
        meta.synced = signed
        for k in sorted(changed):
            found = self._check_leaf(peer, signed, k, old_rep, old_edges.get(k), old_synced, fetched.get(k))
            if found is not None:
                report.misbehavior.append(found)
                if peer in self.punished:
                    return report
        self._attest_from_replica(peer)
        if changed:
            self._forward_root(peer, signed, peer)
        return report

    def _attest_from_replica(self, peer: Digest) -> None:
        mine = self.edges.get(peer)
        meta = self.peer_meta.get(peer)
        if mine is None or meta is None or meta.synced is None:
            return
        rep = self.replicas[peer]
        current = mine.statement_of(peer)
        if current is not None and current.proves(mine):
            return
        if rep.get(mine.key) == mine.digest:
            self.edges[peer] = mine.attested(peer, EdgeStatement(meta.synced, rep.prove(mine.key)))

    def _check_leaf(self, peer, signed, key, old_rep, old_edge, old_synced, new_edge):
        rep = self.replicas[peer]
        st_new = EdgeStatement(signed, rep.prove(key))
        if new_edge is not None:
            if new_edge.counter_of(peer) > signed.m:
                return self._detected(Equivocation(FUTURE_COUNTER, st_new, edge=new_edge))
            if (
                old_edge is not None
                and old_synced is not None
                and new_edge.digest != old_edge.digest
                and new_edge.counter_of(peer) <= old_edge.counter_of(peer)
            ):
                st_old = EdgeStatement(old_synced, old_rep.prove(key))
                return self._detected(Equivocation(ROLLBACK, st_old, st_new, edge=old_edge, second_edge=new_edge))
        if key == edge_key(peer, self.address):
            return self._check_own_edge(peer, signed, st_new, new_edge)
        if new_edge is None:
            return None
        x = new_edge.other(peer)
        other = self.replica_edges.get(x, {}).get(key)
        x_meta = self.peer_meta.get(x)
        if x not in self.edges or other is None or x_meta is None or x_meta.synced is None:
            return None
        if other.digest == new_edge.digest:
            return None
        if x_meta.synced.m < new_edge.counter_of(x):
            self._request_sync(x)
            return None
        if not conflicting(new_edge, signed.m, other, x_meta.synced.m, peer, x):
            return None
        st_x = EdgeStatement(x_meta.synced, self.replicas[x].prove(key))
        blame = self._single_party(new_edge, st_new, other, st_x, peer, x)
        return self._detected(blame or InconsistentEdge(new_edge, st_new, other, st_x))

    def _single_party(self, ea, st_a, eb, st_b, a, b):
        """Rollback evidence against one side, using attestations the records carry."""
        v = self.params.v
        for later, later_st, earlier, signer in ((ea, st_a, eb, a), (eb, st_b, ea, b)):
            att = earlier.statement_of(signer)
            if att is None:
                continue
            cand = Equivocation(ROLLBACK, att, later_st, edge=earlier, second_edge=later)
            if cand.verify(v):
                return cand
        return None

    def _check_own_edge(self, peer, signed, st_new, new_edge):
        mine = self.edges.get(peer)
        if mine is None:
            return None
        if new_edge is None:
            return self._on_peer_deleted(peer, st_new, mine)
        if new_edge.digest == mine.digest:
            return None
        att = mine.statement_of(peer)
        if att is not None:
            cand = Equivocation(ROLLBACK, att, st_new, edge=mine, second_edge=new_edge)
            if cand.verify(self.params.v):
                return self._detected(cand)
        if conflicting(mine, self.signed.m, new_edge, signed.m, self.address, peer):
            return self._detected(InconsistentEdge(mine, self.statement(mine.key), new_edge, st_new))
        return None

    def _on_peer_deleted(self, peer, absence: EdgeStatement, mine: EdgeState):
        att = mine.statement_of(peer)
        if att is not None:
            claim = MaliciousDeletion(mine, att, absence)
            if claim.verify(self.params.v):
                return self._detected(claim)
        # the peer dropped a stale edge; mirror it
        self._remove_edge(peer)
        self.commit()
        return None

    # -- misbehavior ------------------------------------------------------

    def _detected(self, proof: MisbehaviorProof) -> MisbehaviorProof:
        self._record("misbehavior_detected", proof=type(proof).__name__, variant=getattr(proof, "kind", ""), implicated=sorted(proof.implicated()))
        self.handle_misbehavior(proof, hops=0)
        return proof

    def handle_misbehavior(self, proof: MisbehaviorProof, hops: int = 0, src: Optional[Digest] = None) -> list[Digest]:
        """Verify, punish and forward a proof once. Returns the peers whose edges were dropped."""
        d = proof_digest(proof)
        if d in self.proofs_seen:
            return []
        self.proofs_seen.add(d)
        try:
            valid = proof.verify(self.params.v)
        except Exception:
            valid = False
        if not valid:
            self._record("invalid_proof", src=src)
            log.info("ignoring invalid misbehavior proof from %s", src.hex()[:8] if src else "?")
            return []
        if isinstance(proof, MaliciousDeletion) and proof.deleter != self.address:
            verdict = self._check_justification(proof, hops)
            if verdict is not None:
                return verdict
        implicated = sorted(proof.implicated() - {self.address})
        dropped = []
        for bad in implicated:
            self.punished.add(bad)
            self.held_proofs.setdefault(bad, proof)
            if bad in self.edges:
                self._remove_edge(bad)
                dropped.append(bad)
            self.replicas.pop(bad, None)
            self.replica_edges.pop(bad, None)
        if dropped:
            self.commit()
        self._record("punish", implicated=implicated, dropped=dropped, hops=hops)
        self._broadcast(proof, implicated, hops + 1, src)
        return dropped

    def _check_justification(self, claim: MaliciousDeletion, hops: int):
        victim = claim.edge.other(claim.deleter)
        try:
            reply = self.net.rpc(self.address, claim.deleter, JustifyRequest(victim))
        except PeerUnreachable:
            return None
        if not isinstance(reply, JustifyReply):
            return None
        if reply.proof is not None and victim in getattr(reply.proof, "implicated", lambda: ())():
            if reply.proof.verify(self.params.v):
                return self.handle_misbehavior(reply.proof, hops)
        e, st = reply.edge, reply.retained
        if e is not None and st is not None and e.key == claim.edge.key and st.signed.address == claim.deleter:
            newer = e.counter_of(claim.deleter) > claim.edge.counter_of(claim.deleter)
            if newer and st.proves(e) and claim.absence.signed.m - e.counter_of(claim.deleter) >= self.params.v:
                self._record("claim_refuted", deleter=claim.deleter)
                return []
        return None

    def _broadcast(self, proof, implicated, hops, src) -> None:
        targets = set(self.edges)
        for bad in implicated:
            for e in self.replica_edges.get(bad, {}).values():
                targets.add(e.other(bad))
            lookup = getattr(self.net, "lookup_file", None)
            f = lookup(self.address, bad) if lookup is not None else None
            if f is not None:
                targets.update(pid for pid, _ in f.peers)
        targets -= {self.address, src, *implicated}
        msg = MisbehaviorBroadcast(proof, hops)
        for t in sorted(x for x in targets if x is not None):
            self.net.send(self.address, t, msg)

    # -- payments ---------------------------------------------------------

    def ensure_synced(self, peer: Digest) -> None:
        rep = self.replicas.get(peer)
        meta = self.peer_meta.get(peer)
        if rep is None or meta is None or meta.synced is None or rep._stale or meta.latest is None or rep.root != meta.latest.root:
            self.sync_with_peer(peer)
            return
        reply = self.net.rpc(self.address, peer, SyncRequest())
        if reply.signed.root != rep.root:
            self.sync_with_peer(peer)

    def pay(self, receiver: Digest, price: int, arbitrage: Optional[int] = None) -> PaymentReceipt:
        """Pay ``price`` units of the receiver's credit by minting our own into the edge."""
        if receiver not in self.edges:
            raise NoEdge(receiver.hex()[:8])
        if price == 0:
            return PaymentReceipt(self.address, receiver, 0, 0)
        rounds = self.params.arbitrage_rounds if arbitrage is None else int(arbitrage)
        plans = []
        for _ in range(rounds):
            try:
                plan = self.request_mutual_arbitrage(receiver)
            except (PeerUnreachable, StaleReserves, SyncFailed, InvalidSignature, Refused):
                break
            if plan is None:
                break
            plans.append(plan)
        try:
            self.ensure_synced(receiver)
        except PeerUnreachable as exc:
            raise CounterpartyTimeout(str(exc)) from exc
        edge = self.edges[receiver]
        before = edge.reserves_for(self.address)
        delta_in = quote_input(before, price)
        if self.params.mint_cap is not None and delta_in > self.params.mint_cap:
            raise Refused(f"payment needs {delta_in} > mint cap {self.params.mint_cap}")
        signed = self.sign_state()
        try:
            reply = self.net.rpc(self.address, receiver, PaymentPropose(edge.digest, price, delta_in, signed))
        except PeerUnreachable as exc:
            raise CounterpartyTimeout("payment proposal lost") from exc
        if isinstance(reply, PaymentAbort):
            raise _abort_error(reply.reason)
        new_edge = edge.with_reserves(self.address, before.r_a + delta_in, before.r_b - price, self.next_m, reply.next_m)
        try:
            ack = self.net.rpc(self.address, receiver, PaymentCommit(new_edge))
        except PeerUnreachable as exc:
            raise CounterpartyTimeout("payment commit lost") from exc
        if isinstance(ack, PaymentAbort):
            raise _abort_error(ack.reason)
        self._apply_counterparty_ack(receiver, [new_edge], ack)
        receipt = PaymentReceipt(self.address, receiver, price, delta_in, before, new_edge.reserves_for(self.address), plans)
        self._record("payment", receiver=receiver, price=price, paid=delta_in)
        return receipt

    def _apply_counterparty_ack(self, peer: Digest, new_edges, ack) -> None:
        """Commit our side after the counterparty committed and sent its signed root."""
        for e in new_edges:
            self._set_edge(e)
        ok = isinstance(ack, StateAnnounce) and ack.signed.address == peer and ack.signed.verify()
        if ok:
            self._observe(peer, ack.signed)
            for e, proof in zip(ack.edges, ack.proofs):
                st = EdgeStatement(ack.signed, proof)
                if e.has(self.address) and st.proves(e) and self.edges.get(e.other(self.address)) == e:
                    other = e.other(self.address)
                    self.edges[other] = self.edges[other].attested(peer, st)
            self._fast_replica_update(peer, ack)
        for e in new_edges:
            self._attest_self(e.other(self.address))
        self.commit()

    def _fast_replica_update(self, peer: Digest, ack: StateAnnounce) -> None:
        rep = self.replicas.get(peer)
        meta = self.peer_meta.get(peer)
        if rep is None or rep._stale or meta is None or meta.synced is None:
            return
        trial = rep.copy()
        try:
            for e in ack.edges:
                if e.key in trial.scope and trial.get(e.key) is not None:
                    trial.update(e.key, e.digest)
        except (InvalidProof, HypersynError):
            return
        if trial.root == ack.signed.root:
            self.replicas[peer] = trial
            for e in ack.edges:
                if e.key in trial.scope:
                    self.replica_edges[peer][e.key] = e
            meta.synced = ack.signed

    def _on_payment_propose(self, src: Digest, msg: PaymentPropose):
        edge = self.edges.get(src)
        if edge is None or src in self.punished:
            return PaymentAbort("no_edge")
        if edge.digest != msg.edge_digest:
            return PaymentAbort("stale_edge")
        try:
            self._observe(src, msg.payer_signed)
            rep = self.replicas.get(src)
            if rep is None or rep._stale or rep.root != msg.payer_signed.root:
                self.sync_with_peer(src)
        except (InvalidSignature, SyncFailed, PeerUnreachable):
            return PaymentAbort("sync_failed")
        if src not in self.edges:
            return PaymentAbort("no_edge")
        try:
            expected = quote_input(edge.reserves_for(src), msg.price)
        except InsufficientDepth:
            return PaymentAbort("insufficient_depth")
        if expected != msg.delta_in:
            return PaymentAbort("bad_quote")
        self.pending[("pay", src)] = (edge.digest, msg.price, msg.delta_in, self.next_m)
        return PaymentAccept(self.next_m)

    def _on_payment_commit(self, src: Digest, msg: PaymentCommit):
        p = self.pending.pop(("pay", src), None)
        edge = self.edges.get(src)
        if p is None or edge is None or edge.digest != p[0]:
            return PaymentAbort("no_pending")
        _, price, delta_in, next_m = p
        res = edge.reserves_for(src)
        m_src = msg.edge.counter_of(src) if msg.edge.has(src) else -1
        expected = edge.with_reserves(src, res.r_a + delta_in, res.r_b - price, max(m_src, 0), next_m)
        if msg.edge != expected or m_src <= edge.counter_of(src) or next_m != self.next_m:
            return PaymentAbort("bad_commit")
        self._set_edge(expected)
        self._attest_self(src)
        st = self.edges[src].statement_of(self.address)
        reply = StateAnnounce(self.signed, (expected,), (st.proof,))
        self.commit()
        return reply

    def _on_payment_abort(self, src: Digest, msg: PaymentAbort):
        self.pending.pop(("pay", src), None)
        return None

    # -- mutual arbitrage -------------------------------------------------

    def request_mutual_arbitrage(self, counterparty: Digest) -> Optional[CyclePlan]:
        """Ask ``counterparty`` to pick a common peer and run a cycle that favours us."""
        if counterparty not in self.edges:
            raise NoEdge(counterparty.hex()[:8])
        try:
            reply = self.net.rpc(self.address, counterparty, ArbitrageRequest(self.sign_state()))
        except PeerUnreachable:
            raise
        if not isinstance(reply, PeerChoice) or not reply.peer:
            return None
        return reply.plan

    def _triangle(self, requester: Digest, c: Digest) -> Optional[TriangleView]:
        e_ab = self.edges.get(requester)
        e_ac = self.edges.get(c)
        e_bc = self.replica_edges.get(requester, {}).get(edge_key(requester, c))
        if e_bc is None:
            e_bc = self.replica_edges.get(c, {}).get(edge_key(requester, c))
        if e_ab is None or e_ac is None or e_bc is None:
            return None
        a, b = self.address, requester
        return TriangleView(
            a, b, c,
            e_ab.reserve_of(a), e_ab.reserve_of(b),
            e_bc.reserve_of(b), e_bc.reserve_of(c),
            e_ac.reserve_of(c), e_ac.reserve_of(a),
        )

    def plan_arbitrage_for(self, requester: Digest):
        """Candidate (initiator, plan) pairs that raise the requester's value against us."""
        candidates = []
        for c in sorted(self.edges):
            if c == requester or c in self.punished:
                continue
            view = self._triangle(requester, c)
            if view is None:
                continue
            for start in (self.address, requester, c):
                plan = best_cycle(view, start)
                if plan is not None and (self.address, requester) in plan.edges():
                    candidates.append((start, plan))
        return candidates

    def _on_arbitrage_request(self, src: Digest, msg: ArbitrageRequest):
        if src not in self.edges or src in self.punished:
            return PeerChoice()
        try:
            self._observe(src, msg.requester_signed)
            rep = self.replicas.get(src)
            if rep is None or rep._stale or rep.root != msg.requester_signed.root:
                self.sync_with_peer(src)
        except (InvalidSignature, SyncFailed, PeerUnreachable):
            return PeerChoice()
        for attempt in range(2):
            choice = select_initiator(self.plan_arbitrage_for(src))
            if choice is None:
                return PeerChoice()
            start, plan = choice
            third = next(x for x in plan.path if x not in (self.address, src))
            try:
                self._run_cycle(plan, src, third)
            except StaleReserves:
                for peer in (src, third):
                    try:
                        self.sync_with_peer(peer)
                    except (PeerUnreachable, SyncFailed, InvalidSignature):
                        return PeerChoice()
                continue
            except (PeerUnreachable, CounterpartyTimeout, Refused, Unprofitable):
                return PeerChoice()
            self._record("arbitrage", requester=src, peer=third, initiator=start, delta_in=plan.delta_in, profit=plan.expected_profit)
            return PeerChoice(third, start, plan.direction, plan.delta_in, plan.expected_profit, plan)
        return PeerChoice()

    def _cycle_edges(self, path, requester, third) -> list[EdgeState]:
        out = []
        for x, y in zip(path, path[1:] + path[:1]):
            if self.address in (x, y):
                out.append(self.edges[y if x == self.address else x])
            else:
                out.append(self.replica_edges[requester].get(edge_key(x, y)) or self.replica_edges[third][edge_key(x, y)])
        return out

    def _run_cycle(self, plan: CyclePlan, requester: Digest, third: Digest) -> None:
        before = self._cycle_edges(plan.path, requester, third)
        accepts = {}
        for p in (requester, third):
            try:
                r = self.net.rpc(self.address, p, CyclePropose(plan.path, plan.delta_in, tuple(before)))
            except PeerUnreachable as exc:
                raise CounterpartyTimeout("cycle proposal lost") from exc
            if isinstance(r, PaymentAbort):
                if r.reason == "stale":
                    raise StaleReserves("participant holds different reserves")
                raise Refused(r.reason)
            accepts[p] = r.next_m
        accepts[self.address] = self.next_m
        new_edges = _cycle_result(plan.path, plan.delta_in, before, accepts)
        acks = {}
        for p in (requester, third):
            acks[p] = self.net.rpc(self.address, p, CycleCommit(tuple(new_edges)), reliable=True)
        mine = [e for e in new_edges if e.has(self.address)]
        for e in mine:
            self._set_edge(e)
        for p, ack in acks.items():
            if isinstance(ack, StateAnnounce) and ack.signed.address == p and ack.signed.verify():
                try:
                    self._observe(p, ack.signed)
                except InvalidSignature:
                    continue
                for e, proof in zip(ack.edges, ack.proofs):
                    st = EdgeStatement(ack.signed, proof)
                    if e.has(self.address) and self.edges.get(e.other(self.address)) == e and st.proves(e):
                        self.edges[p] = self.edges[p].attested(p, st)
                self._fast_replica_update(p, ack)
        for e in mine:
            self._attest_self(e.other(self.address))
        self.commit()

    def _on_cycle_propose(self, src: Digest, msg: CyclePropose):
        if src not in self.edges or self.address not in msg.path:
            return PaymentAbort("not_participant")
        for e in msg.edges_before:
            if e.has(self.address):
                mine = self.edges.get(e.other(self.address))
                if mine is None or mine != e:
                    return PaymentAbort("stale")
        try:
            _cycle_result(msg.path, msg.delta_in, list(msg.edges_before), None)
        except (Unprofitable, InsufficientDepth, StaleReserves):
            return PaymentAbort("unprofitable")
        self.pending[("cycle", src)] = (msg, self.next_m)
        return CycleAccept(self.next_m)

    def _on_cycle_commit(self, src: Digest, msg: CycleCommit):
        p = self.pending.pop(("cycle", src), None)
        if p is None:
            return PaymentAbort("no_pending")
        proposal, next_m = p
        mine = [e for e in msg.edges if e.has(self.address)]
        legs = _cycle_legs(proposal.path, proposal.delta_in, list(proposal.edges_before))
        for e in mine:
            before = self.edges.get(e.other(self.address))
            expect = legs.get(e.key)
            if before is None or expect is None or e.counter_of(self.address) != next_m:
                return PaymentAbort("bad_commit")
            if (e.r_lo, e.r_hi) != expect:
                return PaymentAbort("bad_commit")
        for e in mine:
            self._set_edge(e)
        for e in mine:
            self._attest_self(e.other(self.address))
        proofs = tuple(self.tree.prove(e.key) for e in mine)
        reply = StateAnnounce(self.signed, tuple(mine), proofs)
        self.commit()
        return reply

    # -- edge lifecycle ---------------------------------------------------

    def open_edge_negotiated(self, peer: Digest, r_self: int, r_peer: int, via: Digest = b"") -> EdgeState:
        if peer in self.edges:
            raise EdgeExists(peer.hex()[:8])
        if r_self <= 0 or r_peer <= 0:
            raise ValueError("initial reserves must be positive")
        try:
            reply = self.net.rpc(
                self.address, peer,
                EdgeOpenPropose(self.keys.public, self.network_address, r_self, r_peer, self.next_m, via),
            )
        except PeerUnreachable as exc:
            raise CounterpartyTimeout("edge proposal lost") from exc
        if not isinstance(reply, EdgeOpenAccept):
            raise Refused(getattr(reply, "reason", "refused"))
        edge = EdgeState.between(self.address, peer, r_self, r_peer, self.next_m, reply.next_m)
        try:
            ack = self.net.rpc(self.address, peer, EdgeOpenCommit(edge))
        except PeerUnreachable as exc:
            raise CounterpartyTimeout("edge commit lost") from exc
        if isinstance(ack, PaymentAbort):
            raise Refused(ack.reason)
        meta = self.peer_meta.setdefault(peer, PeerMeta())
        meta.public, meta.network_address = reply.public, reply.address
        meta.last_contact = self.net.now()
        self._apply_counterparty_ack(peer, [edge], ack)
        self._record("edge_open", peer=peer, r_self=r_self, r_peer=r_peer)
        self._request_sync(peer)
        return self.edges[peer]

    def open_edge_common(self, peer: Digest, common: Digest) -> EdgeState:
        """Open an edge priced by one hypothetical cycle through a shared neighbour."""
        if peer in self.edges:
            raise EdgeExists(peer.hex()[:8])
        if common not in self.edges:
            raise NoCommonPeer("no edge to the proposed common node")
        e_bc = self.fetch_edge(common, peer)
        if e_bc is None:
            raise NoCommonPeer("common node has no edge with the peer")
        r_a, r_b = common_node_reserves(self.address, peer, common, self.edges[common], e_bc, self.params.initial_reserve)
        return self.open_edge_negotiated(peer, r_a, r_b, via=common)

    def fetch_edge(self, holder: Digest, other: Digest) -> Optional[EdgeState]:
        """Ask ``holder`` for its edge with ``other`` and check it against its signed root."""
        reply = self.net.rpc(self.address, holder, EdgeProofRequest(other))
        if not isinstance(reply, EdgeProofReply) or reply.edge is None:
            return None
        st = EdgeStatement(reply.signed, reply.proof)
        if reply.signed.address != holder or not st.proves(reply.edge):
            raise InvalidProof("edge proof does not verify")
        return reply.edge

    def _on_edge_open_propose(self, src: Digest, msg: EdgeOpenPropose):
        if src in self.edges:
            return PaymentAbort("edge_exists")
        if crypto.hash(msg.public) != src or src in self.punished:
            return PaymentAbort("refused")
        if msg.via:
            try:
                mine = self.edges.get(msg.via)
                other = self.fetch_edge(msg.via, src)
            except (PeerUnreachable, InvalidProof):
                return PaymentAbort("refused")
            if mine is None or other is None:
                return PaymentAbort("refused")
            r_src, r_me = common_node_reserves(src, self.address, msg.via, other, mine, self.params.initial_reserve)
            if (r_src, r_me) != (msg.r_proposer, msg.r_peer):
                return PaymentAbort("refused")
        if not self.accept_edge(src, msg):
            return PaymentAbort("refused")
        self.pending[("open", src)] = (msg, self.next_m)
        return EdgeOpenAccept(self.keys.public, self.network_address, self.next_m)

    def _on_edge_open_commit(self, src: Digest, msg: EdgeOpenCommit):
        p = self.pending.pop(("open", src), None)
        if p is None:
            return PaymentAbort("no_pending")
        proposal, next_m = p
        expected = EdgeState.between(src, self.address, proposal.r_proposer, proposal.r_peer, proposal.next_m, next_m)
        if msg.edge != expected or src in self.edges:
            return PaymentAbort("bad_commit")
        meta = self.peer_meta.setdefault(src, PeerMeta())
        meta.public, meta.network_address = proposal.public, proposal.address
        meta.last_contact = self.net.now()
        self._set_edge(expected)
        self._attest_self(src)
        st = self.edges[src].statement_of(self.address)
        reply = StateAnnounce(self.signed, (expected,), (st.proof,))
        self.commit()
        self._request_sync(src)
        return reply

    def delete_edge(self, peer: Digest) -> None:
        """Unconditionally drop an edge (no staleness check)."""
        if peer not in self.edges:
            raise NoEdge(peer.hex()[:8])
        self._remove_edge(peer)
        self.commit()

    def prune_stale(self, now_counters: Optional[dict] = None) -> list[Digest]:
        """Drop edges whose peer moved on by more than v and has been unreachable."""
        now_counters = now_counters or {}
        now = self.net.now()
        v = self.params.v
        victims = []
        for peer, edge in sorted(self.edges.items()):
            meta = self.peer_meta.get(peer, PeerMeta())
            latest = now_counters.get(peer, meta.latest.m if meta.latest else 0)
            if latest - edge.counter_of(peer) <= v:
                continue
            # keeps the deletion outside what a deletion claim can prove
            if self.next_m - edge.counter_of(self.address) < v:
                continue
            if now - meta.last_contact < self.params.unreachable_ticks:
                continue
            victims.append(peer)
        for peer in victims:
            self.retained[peer] = (self.edges[peer], self.statement(self.edges[peer].key))
            self._remove_edge(peer)
            self._record("prune", peer=peer)
        if victims:
            self.commit()
        return victims

    def advance_counter(self, steps: int = 1) -> None:
        """Re-sign the unchanged root under fresh counters (models unrelated activity)."""
        for _ in range(steps):
            self._touch()
            self.commit()

    # -- serving ----------------------------------------------------------

    def _on_sync_request(self, src: Digest, msg: SyncRequest):
        if msg.depth < 0:
            return StateAnnounce(self.sign_state())
        tree = self._snapshots.get(msg.root, (self.tree, None))[0] if msg.root else self.tree
        return SubtreeDigests(tree.query(msg.depth, msg.prefix))

    def _on_leaf_transfer(self, src: Digest, msg: LeafTransfer):
        snap = self._snapshots.get(msg.root) if msg.root else None
        by_key = snap[1] if snap else {e.key: e for e in self.edges.values()}
        return LeafTransfer(root=msg.root, edges=tuple(by_key[k] for k in msg.keys if k in by_key))

    def _on_edge_proof_request(self, src: Digest, msg: EdgeProofRequest):
        signed = self.sign_state()
        k = edge_key(self.address, msg.owner)
        return EdgeProofReply(signed, self.edges.get(msg.owner), self.tree.prove(k))

    def _on_justify(self, src: Digest, msg: JustifyRequest):
        kept = self.retained.get(msg.victim)
        return JustifyReply(self.held_proofs.get(msg.victim), kept[0] if kept else None, kept[1] if kept else None)

    _rpc_handlers = {
        "SyncRequest": _on_sync_request,
        "LeafTransfer": _on_leaf_transfer,
        "PaymentPropose": _on_payment_propose,
        "PaymentCommit": _on_payment_commit,
        "PaymentAbort": _on_payment_abort,
        "ArbitrageRequest": _on_arbitrage_request,
        "CyclePropose": _on_cycle_propose,
        "CycleCommit": _on_cycle_commit,
        "EdgeOpenPropose": _on_edge_open_propose,
        "EdgeOpenCommit": _on_edge_open_commit,
        "EdgeProofRequest": _on_edge_proof_request,
        "JustifyRequest": _on_justify,
    }

    # -- discovery --------------------------------------------------------

    def attach_dht(self, params: Optional[DhtParams] = None) -> DhtNode:
        if params is None:
            params = DhtParams(v=self.params.v)
        self.dht = DhtNode(self.address, self.net, params, self.network_address)
        return self.dht

    def hypersyn_file(self) -> HypersynFile:
        peers = [(p, self.peer_meta.get(p, PeerMeta()).network_address) for p in self.edges]
        return HypersynFile.of(self.sign_state(), peers)

    def publish_file(self) -> set:
        return self.dht.publish(self.hypersyn_file())

    def refresh_evidence(self, owner: Digest) -> RefreshEvidence:
        """Evidence that we hold a fresh edge with ``owner`` (its own attestation)."""
        if owner == self.address:
            return RefreshEvidence(self.sign_state())
        edge = self.edges.get(owner)
        st = edge.statement_of(owner) if edge is not None else None
        if st is None:
            raise NoEdge("no attested edge with the file owner")
        return RefreshEvidence(st.signed, edge, st.proof)

    # -- introspection ----------------------------------------------------

    def replica_in_sync(self, peer: "Node") -> bool:
        rep = self.replicas.get(peer.address)
        return rep is not None and not rep._stale and rep.root == peer.signed.root


def _empty_proof():
    from .smt import MerkleProof

    return MerkleProof(EMPTY, None, ())


def _abort_error(reason: str) -> HypersynError:
    if reason == "insufficient_depth":
        return InsufficientDepth(reason)
    if reason == "no_edge":
        return NoEdge(reason)
    if reason == "sync_failed":
        return SyncFailed(reason)
    return Refused(reason)


def _cycle_legs(path, delta_in, before) -> dict[Digest, tuple[int, int]]:
    """New (r_lo, r_hi) per edge key after running the cycle on ``before``."""
    legs = []
    for (x, y), e in zip(zip(path, path[1:] + path[:1]), before):
        if e is None or not (e.has(x) and e.has(y)):
            raise StaleReserves("cycle edges do not match the path")
        legs.append(e.reserves_for(x))
    hops = []
    amount = delta_in
    from .exchange import apply_trade

    new = []
    for leg in legs:
        pair, amount = apply_trade(leg, amount)
        new.append(pair)
    if amount - delta_in < 0:
        raise Unprofitable("cycle loses credit")
    out = {}
    for (x, y), e, pair in zip(zip(path, path[1:] + path[:1]), before, new):
        r = EdgeState.between(x, y, pair.r_a, pair.r_b, 0, 0)
        out[e.key] = (r.r_lo, r.r_hi)
    return out


def _cycle_result(path, delta_in, before, next_m) -> list[EdgeState]:
    legs = _cycle_legs(path, delta_in, before)
    if next_m is None:
        return []
    out = []
    for (x, y), e in zip(zip(path, path[1:] + path[:1]), before):
        r_lo, r_hi = legs[e.key]
        m_lo, m_hi = next_m[e.p_lo], next_m[e.p_hi]
        out.append(EdgeState(e.p_lo, e.p_hi, r_lo, r_hi, m_lo, m_hi))
    return out
