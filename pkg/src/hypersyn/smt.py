"""Sparse Merkle tree with presence/absence proofs and pruned replicas.

Keys are 32-byte digests read most-significant bit first. A leaf sits at the
shortest depth at which its key prefix is unique among the present keys, so the
root is a pure function of the key/value set. Nodes are immutable and shared
between versions; copying a tree is O(1) for the node structure.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, NamedTuple, Optional, Union

from .crypto import Digest, hash
from .errors import InconsistentRemote, InvalidProof, KeyAbsent, KeyExists

KEY_BITS = 256
EMPTY: Digest = bytes(32)
_LEAF_TAG = b"\x00"
_BRANCH_TAG = b"\x01"


def leaf_digest(key: Digest, value: Digest) -> Digest:
    return hash(_LEAF_TAG + key + value)


def branch_digest(left: Digest, right: Digest) -> Digest:
    return hash(_BRANCH_TAG + left + right)


def key_int(key: Digest) -> int:
    return int.from_bytes(key, "big")


def _bit(k: int, depth: int) -> int:
    return (k >> (KEY_BITS - 1 - depth)) & 1


class _Leaf:
    __slots__ = ("key", "kint", "value", "digest")

    def __init__(self, key: Digest, value: Digest, kint: Optional[int] = None):
        self.key = key
        self.kint = key_int(key) if kint is None else kint
        self.value = value
        self.digest = leaf_digest(key, value)


class _Branch:
    __slots__ = ("left", "right", "digest")

    def __init__(self, left: "_Node", right: "_Node"):
        self.left = left
        self.right = right
        self.digest = branch_digest(_digest(left), _digest(right))


class _Opaque:
    """A committed subtree digest whose contents a pruned replica does not hold."""

    __slots__ = ("digest",)

    def __init__(self, digest: Digest):
        self.digest = digest


_Node = Union[_Leaf, _Branch, _Opaque, None]


def _digest(node: _Node) -> Digest:
    return EMPTY if node is None else node.digest


def _split(a: _Leaf, b: _Leaf, depth: int) -> _Branch:
    ba, bb = _bit(a.kint, depth), _bit(b.kint, depth)
    if ba != bb:
        return _Branch(a, b) if ba == 0 else _Branch(b, a)
    child = _split(a, b, depth + 1)
    return _Branch(child, None) if ba == 0 else _Branch(None, child)


def _insert(node: _Node, leaf: _Leaf, depth: int) -> _Node:
    if node is None:
        return leaf
    if isinstance(node, _Leaf):
        if node.key == leaf.key:
            raise KeyExists(leaf.key.hex())
        return _split(node, leaf, depth)
    if isinstance(node, _Opaque):
        raise InvalidProof("path crosses a pruned subtree")
    if _bit(leaf.kint, depth):
        return _Branch(node.left, _insert(node.right, leaf, depth + 1))
    return _Branch(_insert(node.left, leaf, depth + 1), node.right)


def _update(node: _Node, leaf: _Leaf, depth: int) -> _Node:
    if isinstance(node, _Leaf) and node.key == leaf.key:
        return leaf
    if isinstance(node, _Branch):
        if _bit(leaf.kint, depth):
            return _Branch(node.left, _update(node.right, leaf, depth + 1))
        return _Branch(_update(node.left, leaf, depth + 1), node.right)
    if isinstance(node, _Opaque):
        raise InvalidProof("path crosses a pruned subtree")
    raise KeyAbsent(leaf.key.hex())


def _delete(node: _Node, key: Digest, kint: int, depth: int) -> _Node:
    if isinstance(node, _Leaf):
        if node.key == key:
            return None
        raise KeyAbsent(key.hex())
    if node is None:
        raise KeyAbsent(key.hex())
    if isinstance(node, _Opaque):
        raise InvalidProof("path crosses a pruned subtree")
    if _bit(kint, depth):
        left, right = node.left, _delete(node.right, key, kint, depth + 1)
    else:
        left, right = _delete(node.left, key, kint, depth + 1), node.right
    # a lone leaf moves up until it meets a sibling that is not empty
    if left is None and (right is None or isinstance(right, _Leaf)):
        return right
    if right is None and isinstance(left, _Leaf):
        return left
    return _Branch(left, right)


def _iter_leaves(node: _Node) -> Iterator[_Leaf]:
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, _Leaf):
            yield n
        elif isinstance(n, _Branch):
            stack.append(n.right)
            stack.append(n.left)


@dataclass(frozen=True)
class MerkleProof:
    """Siblings ordered leaf to root.

    ``leaf_value`` is None when the path ends at an empty node. When it ends at
    a leaf, ``key`` is that leaf's key; an absence proof may therefore name a
    different key that shares the queried prefix.
    """

    key: Digest
    leaf_value: Optional[Digest]
    siblings: tuple[Digest, ...]

    @property
    def depth(self) -> int:
        return len(self.siblings)

    def compute_root(self) -> Digest:
        cur = EMPTY if self.leaf_value is None else leaf_digest(self.key, self.leaf_value)
        k = key_int(self.key)
        d = len(self.siblings)
        for sib in self.siblings:
            d -= 1
            cur = branch_digest(sib, cur) if _bit(k, d) else branch_digest(cur, sib)
        return cur

    def to_bytes(self) -> bytes:
        out = bytearray(self.key)
        if self.leaf_value is None:
            out += b"\xff"
        else:
            out += b"\x00" + self.leaf_value
        out += len(self.siblings).to_bytes(2, "big")
        for s in self.siblings:
            out += s
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "MerkleProof":
        if len(raw) < 35:
            raise InvalidProof("truncated proof")
        key, pos = raw[:32], 32
        if raw[pos] == 0xFF:
            value, pos = None, pos + 1
        elif raw[pos] == 0x00:
            value, pos = raw[pos + 1 : pos + 33], pos + 33
            if len(value) != 32:
                raise InvalidProof("truncated leaf value")
        else:
            raise InvalidProof("bad leaf tag")
        count = int.from_bytes(raw[pos : pos + 2], "big")
        pos += 2
        if len(raw) != pos + 32 * count:
            raise InvalidProof("sibling count does not match length")
        sibs = tuple(raw[pos + 32 * i : pos + 32 * (i + 1)] for i in range(count))
        return cls(key, value, sibs)


def verify_proof(root: Digest, proof: MerkleProof) -> bool:
    try:
        if len(proof.siblings) > KEY_BITS or len(proof.key) != 32:
            return False
        if proof.leaf_value is not None and len(proof.leaf_value) != 32:
            return False
        if any(len(s) != 32 for s in proof.siblings):
            return False
        return proof.compute_root() == root
    except Exception:
        return False


def _share_prefix(a: Digest, b: Digest, bits: int) -> bool:
    if bits == 0:
        return True
    shift = KEY_BITS - bits
    return key_int(a) >> shift == key_int(b) >> shift


def proves_presence(root: Digest, key: Digest, value: Optional[Digest], proof: MerkleProof) -> bool:
    """True iff ``proof`` shows ``key`` present (with ``value`` when given) under ``root``."""
    if proof.key != key or proof.leaf_value is None:
        return False
    if value is not None and proof.leaf_value != value:
        return False
    return verify_proof(root, proof)


def proves_absence(root: Digest, key: Digest, proof: MerkleProof) -> bool:
    if not verify_proof(root, proof):
        return False
    if not _share_prefix(proof.key, key, proof.depth):
        return False
    if proof.leaf_value is None:
        return True
    return proof.key != key


class NodeInfo(NamedTuple):
    """Answer to a subtree query at (depth, prefix)."""

    kind: str  # "empty" | "leaf" | "branch"
    key: Optional[Digest] = None
    value: Optional[Digest] = None
    left: Optional[Digest] = None
    right: Optional[Digest] = None

    def digest(self) -> Digest:
        if self.kind == "leaf":
            return leaf_digest(self.key, self.value)
        if self.kind == "branch":
            return branch_digest(self.left, self.right)
        return EMPTY


SubtreeQuery = Callable[[int, int], NodeInfo]


class SparseMerkleTree:
    """Authenticated key -> value map over 256-bit keys."""

    def __init__(self, items: Iterable[tuple[Digest, Digest]] = ()):
        self._node: _Node = None
        self._values: dict[Digest, Digest] = {}
        for k, v in items:
            self.insert(k, v)

    @property
    def root(self) -> Digest:
        return _digest(self._node)

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, key: Digest) -> bool:
        return key in self._values

    def get(self, key: Digest) -> Optional[Digest]:
        return self._values.get(key)

    def items(self) -> list[tuple[Digest, Digest]]:
        return sorted(self._values.items())

    def copy(self) -> "SparseMerkleTree":
        t = type(self).__new__(type(self))
        t.__dict__.update(self.__dict__)
        t._values = dict(self._values)
        return t

    def insert(self, key: Digest, value: Digest) -> "SparseMerkleTree":
        if key in self._values:
            raise KeyExists(key.hex())
        self._node = _insert(self._node, _Leaf(key, value), 0)
        self._values[key] = value
        return self

    def update(self, key: Digest, value: Digest) -> "SparseMerkleTree":
        if key not in self._values:
            raise KeyAbsent(key.hex())
        self._node = _update(self._node, _Leaf(key, value), 0)
        self._values[key] = value
        return self

    def delete(self, key: Digest) -> "SparseMerkleTree":
        if key not in self._values:
            raise KeyAbsent(key.hex())
        self._node = _delete(self._node, key, key_int(key), 0)
        del self._values[key]
        return self

    def set(self, key: Digest, value: Digest) -> "SparseMerkleTree":
        return self.update(key, value) if key in self._values else self.insert(key, value)

    def prove(self, key: Digest) -> MerkleProof:
        k = key_int(key)
        node, depth, sibs = self._node, 0, []
        while isinstance(node, _Branch):
            if _bit(k, depth):
                sibs.append(_digest(node.left))
                node = node.right
            else:
                sibs.append(_digest(node.right))
                node = node.left
            depth += 1
        if isinstance(node, _Opaque):
            raise InvalidProof("path crosses a pruned subtree")
        sibs.reverse()
        if node is None:
            return MerkleProof(key, None, tuple(sibs))
        return MerkleProof(node.key, node.value, tuple(sibs))

    def query(self, depth: int, prefix: int) -> NodeInfo:
        """Describe the node at the position addressed by ``depth`` prefix bits."""
        node = self._node
        for d in range(depth):
            if not isinstance(node, _Branch):
                break
            node = node.right if (prefix >> (depth - 1 - d)) & 1 else node.left
        if node is None:
            return NodeInfo("empty")
        if isinstance(node, _Leaf):
            return NodeInfo("leaf", key=node.key, value=node.value)
        if isinstance(node, _Opaque):
            raise InvalidProof("cannot serve a pruned subtree")
        return NodeInfo("branch", left=_digest(node.left), right=_digest(node.right))

    def serialize(self) -> bytes:
        """Sorted (key, value) pairs, each length-prefixed."""
        out = bytearray(len(self._values).to_bytes(4, "big"))
        for k, v in self.items():
            out += len(k).to_bytes(4, "big") + k + len(v).to_bytes(4, "big") + v
        return bytes(out)

    @classmethod
    def deserialize(cls, raw: bytes) -> "SparseMerkleTree":
        n, pos, items = int.from_bytes(raw[:4], "big"), 4, []
        for _ in range(n):
            pair = []
            for _ in range(2):
                ln = int.from_bytes(raw[pos : pos + 4], "big")
                pair.append(raw[pos + 4 : pos + 4 + ln])
                pos += 4 + ln
            items.append(tuple(pair))
        return cls(items)

    def depths(self) -> dict[Digest, int]:
        """Leaf depth per key (proof length)."""
        out, stack = {}, [(self._node, 0)]
        while stack:
            n, d = stack.pop()
            if isinstance(n, _Leaf):
                out[n.key] = d
            elif isinstance(n, _Branch):
                stack.append((n.left, d + 1))
                stack.append((n.right, d + 1))
        return out


def _prune(node: _Node, scope: list[int], depth: int, prefix: int) -> _Node:
    if node is None or isinstance(node, (_Leaf, _Opaque)):
        return node
    if not _scope_under(scope, depth, prefix):
        return _Opaque(node.digest)
    return _Branch(
        _prune(node.left, scope, depth + 1, prefix << 1),
        _prune(node.right, scope, depth + 1, (prefix << 1) | 1),
    )


def _scope_under(scope: list[int], depth: int, prefix: int) -> bool:
    shift = KEY_BITS - depth
    lo = prefix << shift
    i = bisect.bisect_left(scope, lo)
    return i < len(scope) and scope[i] < ((prefix + 1) << shift)


class PrunedSMT(SparseMerkleTree):
    """A peer's tree restricted to a key scope; other subtrees are opaque digests.

    The root always equals the full source tree's root at the version it was
    synchronised to.
    """

    def __init__(self, scope: Iterable[Digest] = ()):
        super().__init__()
        self._scope_keys: frozenset[Digest] = frozenset(scope)
        self._scope: list[int] = sorted(key_int(k) for k in self._scope_keys)
        self._stale = False

    @classmethod
    def from_tree(cls, tree: SparseMerkleTree, scope: Iterable[Digest]) -> "PrunedSMT":
        p = cls(scope)
        p._node = _prune(tree._node, p._scope, 0, 0)
        p._values = {leaf.key: leaf.value for leaf in _iter_leaves(p._node)}
        return p

    @property
    def scope(self) -> frozenset[Digest]:
        return self._scope_keys

    def set_scope(self, scope: Iterable[Digest]) -> None:
        new = frozenset(scope)
        if new - self._scope_keys:
            self._stale = True  # opaque frontiers may now hide in-scope keys
        self._scope_keys = new
        self._scope = sorted(key_int(k) for k in new)

    def scoped_items(self) -> dict[Digest, Digest]:
        return {k: v for k, v in self._values.items() if k in self._scope_keys}

    def _reconcile(self, remote_root: Digest, query: SubtreeQuery, counter: list[int]) -> _Node:
        scope = self._scope

        def rec(local: _Node, remote: Digest, depth: int, prefix: int) -> _Node:
            if remote == EMPTY:
                return None
            if _digest(local) == remote and not isinstance(local, _Opaque):
                return local
            if not _scope_under(scope, depth, prefix):
                return _Opaque(remote)
            if isinstance(local, _Opaque) and local.digest == remote and not self._stale:
                return local
            info = query(depth, prefix)
            counter[0] += 1
            if info.digest() != remote:
                raise InconsistentRemote(f"subtree at depth {depth} does not match committed digest")
            if info.kind == "leaf":
                return _Leaf(info.key, info.value)
            if isinstance(local, _Branch):
                lc, rc = local.left, local.right
            elif isinstance(local, _Leaf):
                lc, rc = (None, local) if _bit(local.kint, depth) else (local, None)
            else:
                lc = rc = None
            return _Branch(
                rec(lc, info.left, depth + 1, prefix << 1),
                rec(rc, info.right, depth + 1, (prefix << 1) | 1),
            )

        start = None if self._stale else self._node
        return rec(start, remote_root, 0, 0)

    def diff(self, remote_root: Digest, query: SubtreeQuery) -> set[Digest]:
        """In-scope keys whose value differs from the remote, without mutating."""
        return self._diff(self._reconcile(remote_root, query, [0]))

    def _diff(self, new_node: _Node) -> set[Digest]:
        old = self.scoped_items()
        new = {l.key: l.value for l in _iter_leaves(new_node) if l.key in self._scope_keys}
        return {k for k in old.keys() | new.keys() if old.get(k) != new.get(k)}

    def sync(self, remote_root: Digest, query: SubtreeQuery) -> tuple[set[Digest], int]:
        """Bring the replica to ``remote_root``; returns (divergent keys, queries made)."""
        counter = [0]
        new_node = self._reconcile(remote_root, query, counter)
        changed = self._diff(new_node)
        self._node = new_node
        self._values = {leaf.key: leaf.value for leaf in _iter_leaves(new_node)}
        self._stale = False
        return changed, counter[0]
