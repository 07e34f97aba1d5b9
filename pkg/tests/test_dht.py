import math
from dataclasses import replace

import pytest

import oracles
from hypersyn.dht import DhtParams, HypersynFile, RefreshEvidence, RoutingTable, check_evidence, distance
from hypersyn.errors import InvalidEvidence, InvalidSignature, StaleCounter, StaleEvidence
from hypersyn.network import LocalNetwork
from hypersyn.node import Node, ProtocolParams
from hypersyn.state import sign_root


def world(n, ttl=10_000):
    net = LocalNetwork()
    nodes = [Node(i.to_bytes(2, "big") * 16, net, ProtocolParams(arbitrage_rounds=0), network_address=f"d{i}") for i in range(n)]
    for x in nodes:
        x.attach_dht().params.ttl = ttl
    for x in nodes:
        x.dht.bootstrap([(nodes[0].address, nodes[0].network_address)])
    return net, nodes


def test_distance_and_buckets():
    a, b = bytes(32), bytes(31) + b"\x01"
    assert distance(a, b) == 1 and distance(a, a) == 0
    t = RoutingTable(a, k=2)
    assert t.bucket_index(b) == 255
    assert t.bucket_index(b"\x80" + bytes(31)) == 0
    for i in range(4):
        t.update(b"\x80" + bytes([i]) + bytes(30), f"x{i}")
    assert len(t) == 2  # bucket 0 is full
    t.remove(b"\x80" + bytes(31))
    assert len(t) == 1


def test_file_encoding_oracle_and_roundtrip():
    net, (a, b) = world(2)
    a.open_edge_negotiated(b.address, 5, 5)
    f = a.hypersyn_file()
    assert f.verify() and f.peers == ((b.address, "d1"),)
    assert f.encode() == oracles.file_encoding(f.node_id, f.public, f.root, f.m, f.sig, f.peers)
    assert HypersynFile.decode(f.encode()) == f
    assert not replace(f, m=f.m + 1).verify()
    assert not replace(f, peers=f.peers * 2).verify()


def test_publish_and_lookup_logarithmic():
    net, nodes = world(128)
    target = nodes[37]
    stored = target.publish_file()
    assert len(stored) == 3
    for asker in nodes[::16]:
        f = asker.dht.lookup(target.address)
        assert f is not None and f.node_id == target.address
        assert asker.dht.last_queries <= 3 * math.ceil(math.log2(128))


def test_counter_downgrade_rejected():
    net, nodes = world(24)
    x = nodes[5]
    old = x.hypersyn_file()
    x.advance_counter(2)
    x.publish_file()
    with pytest.raises(StaleCounter):
        x.dht.publish(old)
    assert nodes[9].dht.lookup(x.address).m == x.m
    for n in nodes:
        seen = {}
        for nid, m in n.dht.accepted:
            assert m > seen.get(nid, -1)
            seen[nid] = m


def test_forged_file_rejected():
    net, nodes = world(8)
    f = nodes[1].hypersyn_file()
    with pytest.raises(InvalidSignature):
        nodes[1].dht.publish(replace(f, root=b"\x01" * 32))


def test_equal_counter_fork_reported():
    net, nodes = world(8)
    x = nodes[2]
    x.publish_file()
    seen = []
    for n in nodes:
        n.dht.on_equivocation = lambda old, new: seen.append((old.root, new.root))
    fork = HypersynFile.of(sign_root(x.keys, b"\x09" * 32, x.m), [])
    with pytest.raises(StaleCounter):
        x.dht.publish(fork)
    assert seen and all(new == b"\x09" * 32 for _, new in seen)


def test_ttl_expiry_and_refresh():
    net, nodes = world(10, ttl=50)
    owner, peer = nodes[3], nodes[4]
    owner.open_edge_negotiated(peer.address, 10, 10)
    net.run()
    owner.publish_file()
    net.tick(30)
    assert peer.dht.refresh(owner.address, peer.refresh_evidence(owner.address))
    net.tick(40)
    assert nodes[7].dht.lookup(owner.address) is not None
    net.tick(60)
    for n in nodes:
        n.dht.expire()
    assert nodes[7].dht.lookup(owner.address) is None


def test_refresh_evidence_rules():
    net, (a, b, c) = world(3)
    a.open_edge_negotiated(b.address, 10, 10)
    net.run()
    f = a.hypersyn_file()
    check_evidence(f, a.address, a.refresh_evidence(a.address), 50)
    check_evidence(f, b.address, b.refresh_evidence(a.address), 50)
    with pytest.raises(InvalidEvidence):
        check_evidence(f, c.address, a.refresh_evidence(a.address), 50)
    with pytest.raises(InvalidEvidence):
        check_evidence(f, a.address, RefreshEvidence(c.sign_state()), 50)
    ev = b.refresh_evidence(a.address)
    a.advance_counter(60)
    with pytest.raises(StaleEvidence):
        check_evidence(a.hypersyn_file(), b.address, ev, 50)
    with pytest.raises(StaleEvidence):
        check_evidence(a.hypersyn_file(), a.address, RefreshEvidence(f.signed_root()), 50)


def test_peer_entry_validation():
    net, (a, b, c) = world(3)
    a.open_edge_negotiated(b.address, 10, 10)
    net.run()
    f = a.hypersyn_file()
    assert c.dht.validate_peer_entry(f, f.peers[0])
    assert not c.dht.validate_peer_entry(f, (c.address, "d2"))


def test_unreachable_holders_are_skipped():
    net, nodes = world(40)
    x = nodes[11]
    x.publish_file()
    holders = [n for n in nodes if x.address in n.dht.store]
    net.down.add(holders[0].address)
    assert nodes[30].dht.lookup(x.address) is not None


def test_params_defaults():
    p = DhtParams()
    assert (p.k, p.alpha, p.replicas) == (20, 3, 3)
