"""Scripted adversaries. Each acts through its own keys and ordinary messages."""

from __future__ import annotations

import logging

from ..errors import HypersynError, StaleCounter
from ..messages import MisbehaviorBroadcast, StateAnnounce
from ..misbehavior import SAME_COUNTER, Equivocation
from ..smt import MerkleProof
from ..state import EdgeStatement, SignedRoot, sign_root
from .config import AdversarySpec

log = logging.getLogger(__name__)


def schedule(world, spec: AdversarySpec) -> None:
    node = world.by_name[spec.node]
    world.adversaries[node.address] = spec.role
    if spec.role == "stale-file-replayer":
        world.schedule(spec.rollback_from, capture, world, node)
    world.schedule(spec.at, ACTIONS[spec.role], world, node, spec)


def equivocate(world, node, spec) -> None:
    """Sign two different roots under one counter and show each to half the peers."""
    peers = sorted(node.edges)
    if not peers:
        return
    node._touch()
    real = node.sign_state()
    alt = node.tree.copy()
    dummy = world.substream(f"equivocate:{spec.node}").randbytes(32)
    alt.insert(dummy, dummy)
    fake = sign_root(node.keys, alt.root, real.m)
    world.record("adversary_action", role=spec.role, adversary=node.address, m=real.m)
    for i, p in enumerate(peers):
        world.send(node.address, p, StateAnnounce(real if i % 2 == 0 else fake))


def malicious_delete(world, node, spec) -> None:
    """Drop edges well before the staleness bound allows it."""
    targets = [world.by_name[t].address for t in spec.targets] or sorted(node.edges)[:1]
    world.record("adversary_action", role=spec.role, adversary=node.address, targets=targets)
    for t in targets:
        if t in node.edges:
            node.delete_edge(t)


def capture(world, node) -> None:
    snap = node.tree.copy(), dict(node.edges), node.hypersyn_file()
    world._captured = getattr(world, "_captured", {})
    world._captured[node.address] = snap


def stale_replay(world, node, spec) -> None:
    """Re-publish an old file, then roll edges back and re-sign them under a new counter."""
    tree, edges, file = world._captured[node.address]
    world.record("adversary_action", role=spec.role, adversary=node.address, replay_m=file.m, current_m=node.m)
    if node.dht is not None:
        try:
            node.dht.publish(file)
            world.record("dht_replay_accepted", adversary=node.address, m=file.m)
        except StaleCounter:
            world.record("dht_replay_rejected", adversary=node.address, m=file.m)
        except HypersynError as exc:
            world.record("dht_replay_rejected", adversary=node.address, error=type(exc).__name__)
    current = dict(node.edges)
    node.tree = tree.copy()
    restored = {}
    for p, e in current.items():
        old = edges.get(p)
        if old is None:
            node.tree.set(e.key, e.digest)
        restored[p] = old or e
    for p in set(edges) - set(current):
        node.tree.delete(edges[p].key)
    node.edges = restored
    node._touch()
    node._changed = {e.key: e for e in node.edges.values()}
    node.commit()


def forge_proof(world, node, spec) -> None:
    """Broadcast an equivocation claim against an honest peer with a corrupted signature."""
    targets = [world.by_name[t] for t in spec.targets] or [world.nodes[p] for p in sorted(node.edges)[:1]]
    for victim in targets:
        real = victim.sign_state()
        bogus = SignedRoot(real.public, bytes(32), real.m, bytes(64))
        proof = Equivocation(SAME_COUNTER, real, EdgeStatement(bogus, MerkleProof(bytes(32), None, ())))
        world.record("adversary_action", role=spec.role, adversary=node.address, victim=victim.address)
        for p in sorted(node.edges):
            world.send(node.address, p, MisbehaviorBroadcast(proof, 1))


ACTIONS = {
    "equivocator": equivocate,
    "malicious-deleter": malicious_delete,
    "stale-file-replayer": stale_replay,
    "proof-forger": forge_proof,
}
