"""Self-contained evidence that a node broke the protocol.

Every proof carries the signed statements it relies on, so any recipient can
check it without trusting the sender.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

from . import crypto
from .crypto import Digest
from .state import EdgeState, EdgeStatement, SignedRoot

SAME_COUNTER = "same_counter"
ROLLBACK = "rollback"
FUTURE_COUNTER = "future_counter"


@dataclass(frozen=True)
class Equivocation:
    """Statements from one signer that no honest history can produce.

    same_counter: two different roots signed under one counter.
    rollback: the signer attested ``edge`` at counter >= its change counter, then
        signed a later root holding an older or different version of that edge.
    future_counter: a signed root holds an edge whose signer-side counter
        exceeds the root's own counter.
    """

    kind: str
    first: Union[SignedRoot, EdgeStatement]
    second: Optional[EdgeStatement] = None
    edge: Optional[EdgeState] = None
    second_edge: Optional[EdgeState] = None

    def implicated(self) -> frozenset[Digest]:
        signed = self.first if isinstance(self.first, SignedRoot) else self.first.signed
        return frozenset({signed.address})

    def verify(self, v: int) -> bool:
        if self.kind == SAME_COUNTER:
            a = self.first
            b = self.second.signed if isinstance(self.second, EdgeStatement) else self.second
            return (
                isinstance(a, SignedRoot)
                and isinstance(b, SignedRoot)
                and a.public == b.public
                and a.m == b.m
                and a.root != b.root
                and a.verify()
                and b.verify()
            )
        if self.kind == FUTURE_COUNTER:
            st, edge = self.first, self.edge
            if not isinstance(st, EdgeStatement) or edge is None:
                return False
            signer = st.signed.address
            return edge.has(signer) and st.proves(edge) and edge.counter_of(signer) > st.signed.m
        if self.kind == ROLLBACK:
            a, b, edge = self.first, self.second, self.edge
            if not isinstance(a, EdgeStatement) or not isinstance(b, EdgeStatement) or edge is None:
                return False
            signer = a.signed.address
            if b.signed.public != a.signed.public or not edge.has(signer):
                return False
            if not a.proves(edge):
                return False
            c = edge.counter_of(signer)
            if b.signed.m < max(c, a.signed.m) or b.signed.m == a.signed.m:
                return False
            later = self.second_edge
            if later is None:
                return False
            if not later.key == edge.key or not b.proves(later):
                return False
            # honest histories only move an edge forward on the signer's side
            return later.digest != edge.digest and later.counter_of(signer) <= c
        return False

    def encode(self) -> bytes:
        parts = [self.kind, _enc(self.first), _enc(self.second), _enc(self.edge), _enc(self.second_edge)]
        return crypto.encode_fields(*parts)


@dataclass(frozen=True)
class InconsistentEdge:
    """Two current statements about one edge from its two endpoints that cannot both hold."""

    edge_a: EdgeState
    statement_a: EdgeStatement
    edge_b: EdgeState
    statement_b: EdgeStatement

    def implicated(self) -> frozenset[Digest]:
        return frozenset({self.statement_a.signed.address, self.statement_b.signed.address})

    def verify(self, v: int) -> bool:
        ea, eb = self.edge_a, self.edge_b
        a, b = self.statement_a.signed.address, self.statement_b.signed.address
        if ea.key != eb.key or a == b or not (ea.has(a) and ea.has(b) and eb.has(a) and eb.has(b)):
            return False
        if ea.digest == eb.digest:
            return False
        if not (self.statement_a.proves(ea) and self.statement_b.proves(eb)):
            return False
        return conflicting(ea, self.statement_a.signed.m, eb, self.statement_b.signed.m, a, b)

    def encode(self) -> bytes:
        return crypto.encode_fields(
            "inconsistent", _enc(self.edge_a), _enc(self.statement_a), _enc(self.edge_b), _enc(self.statement_b)
        )


def conflicting(ea: EdgeState, ma: int, eb: EdgeState, mb: int, a: Digest, b: Digest) -> bool:
    """Side a holds ``ea`` at counter ``ma``; side b holds ``eb`` at ``mb``.

    A side is caught out when its statement is at least as recent as the other
    version's change on its own side, yet shows something not newer.
    """
    if ea.digest == eb.digest:
        return False
    b_behind = mb >= ea.counter_of(b) and eb.counter_of(b) <= ea.counter_of(b)
    a_behind = ma >= eb.counter_of(a) and ea.counter_of(a) <= eb.counter_of(a)
    # honest versions advance both counters together, so a split history is a fork
    forked = ea.counter_of(a) > eb.counter_of(a) and eb.counter_of(b) > ea.counter_of(b)
    return b_behind or a_behind or forked


@dataclass(frozen=True)
class MaliciousDeletion:
    """The deleter attested ``edge`` and then signed its absence too soon.

    The gap is measured on the deleter's own counter between its last change to
    the edge and the root that no longer holds it.
    """

    edge: EdgeState
    presence: EdgeStatement
    absence: EdgeStatement

    @cached_property
    def deleter(self) -> Digest:
        return self.presence.signed.address

    def implicated(self) -> frozenset[Digest]:
        return frozenset({self.deleter})

    def verify(self, v: int) -> bool:
        if self.absence.signed.public != self.presence.signed.public:
            return False
        if not self.edge.has(self.deleter):
            return False
        if not (self.presence.proves(self.edge) and self.absence.proves_absent(self.edge.key)):
            return False
        if self.absence.signed.m <= self.presence.signed.m:
            return False
        return self.absence.signed.m - self.edge.counter_of(self.deleter) < v

    def encode(self) -> bytes:
        return crypto.encode_fields("deletion", _enc(self.edge), _enc(self.presence), _enc(self.absence))


MisbehaviorProof = Union[Equivocation, InconsistentEdge, MaliciousDeletion]


def proof_digest(proof: MisbehaviorProof) -> Digest:
    return crypto.hash(proof.encode())


def _enc(obj) -> bytes:
    if obj is None:
        return b""
    if isinstance(obj, (SignedRoot, EdgeStatement, EdgeState)):
        return obj.encode()
    if isinstance(obj, bytes):
        return obj
    raise TypeError(type(obj))
