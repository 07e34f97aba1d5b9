"""Edge records, signed roots and the attestations nodes exchange about them."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional

from . import crypto
from .crypto import Digest
from .exchange import ReservePair
from .smt import EMPTY, MerkleProof, branch_digest, proves_absence, proves_presence

U64_MAX = (1 << 64) - 1


def edge_key(p_a: Digest, p_b: Digest) -> Digest:
    """Tree key of the edge between two addresses (order-insensitive)."""
    lo, hi = (p_a, p_b) if p_a < p_b else (p_b, p_a)
    return crypto.hash_fields(lo, hi)


def _field_leaf(value) -> Digest:
    return crypto.hash(b"\x00" + crypto.encode_fields(value))


@dataclass(frozen=True)
class SignedRoot:
    """A node's signature over (root, counter)."""

    public: bytes
    root: Digest
    m: int
    sig: bytes

    @cached_property
    def address(self) -> Digest:
        return crypto.hash(self.public)

    def verify(self) -> bool:
        if not 0 <= self.m <= U64_MAX:
            return False
        return crypto.verify(self.public, crypto.state_message(self.root, self.m), self.sig)

    def encode(self) -> bytes:
        return crypto.encode_fields(self.public, self.root, self.m, self.sig)


def sign_root(keys: crypto.KeyPair, root: Digest, m: int) -> SignedRoot:
    return SignedRoot(keys.public, root, m, crypto.sign(keys, crypto.state_message(root, m)))


@dataclass(frozen=True)
class EdgeStatement:
    """One side's signed root plus a proof that places an edge (or its absence) under it."""

    signed: SignedRoot
    proof: MerkleProof

    def proves(self, edge: "EdgeState") -> bool:
        return self.signed.verify() and proves_presence(self.signed.root, edge.key, edge.digest, self.proof)

    def proves_absent(self, key: Digest) -> bool:
        return self.signed.verify() and proves_absence(self.signed.root, key, self.proof)

    def encode(self) -> bytes:
        return crypto.encode_fields(self.signed.encode(), self.proof.to_bytes())


@dataclass(frozen=True)
class EdgeState:
    p_lo: Digest
    p_hi: Digest
    r_lo: int
    r_hi: int
    m_lo: int
    m_hi: int
    sig_lo: Optional[EdgeStatement] = field(default=None, compare=False, repr=False)
    sig_hi: Optional[EdgeStatement] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not self.p_lo < self.p_hi:
            raise ValueError("p_lo must sort strictly before p_hi")

    @classmethod
    def between(cls, a: Digest, b: Digest, r_a: int, r_b: int, m_a: int, m_b: int) -> "EdgeState":
        if a < b:
            return cls(a, b, r_a, r_b, m_a, m_b)
        return cls(b, a, r_b, r_a, m_b, m_a)

    @cached_property
    def key(self) -> Digest:
        return crypto.hash_fields(self.p_lo, self.p_hi)

    @cached_property
    def digest(self) -> Digest:
        return edge_hash(self)

    @property
    def version(self) -> tuple[int, int]:
        return (self.m_lo, self.m_hi)

    def has(self, addr: Digest) -> bool:
        return addr == self.p_lo or addr == self.p_hi

    def other(self, addr: Digest) -> Digest:
        if addr == self.p_lo:
            return self.p_hi
        if addr == self.p_hi:
            return self.p_lo
        raise KeyError("address is not an endpoint")

    def reserve_of(self, addr: Digest) -> int:
        return self.r_lo if addr == self.p_lo else self.r_hi

    def counter_of(self, addr: Digest) -> int:
        return self.m_lo if addr == self.p_lo else self.m_hi

    def statement_of(self, addr: Digest) -> Optional[EdgeStatement]:
        return self.sig_lo if addr == self.p_lo else self.sig_hi

    def reserves_for(self, payer: Digest) -> ReservePair:
        """(payer's credit reserve, counterparty's credit reserve)."""
        return ReservePair(self.reserve_of(payer), self.reserve_of(self.other(payer)))

    def with_reserves(self, a: Digest, r_a: int, r_b: int, m_a: int, m_b: int) -> "EdgeState":
        """New version; attestations are dropped because they cover the old digest."""
        return EdgeState.between(a, self.other(a), r_a, r_b, m_a, m_b)

    def attested(self, addr: Digest, statement: EdgeStatement) -> "EdgeState":
        if addr == self.p_lo:
            return replace(self, sig_lo=statement)
        return replace(self, sig_hi=statement)

    def same_version(self, other: Optional["EdgeState"]) -> bool:
        return other is not None and self.digest == other.digest

    def fields(self) -> tuple:
        return (self.r_lo, self.r_hi, self.p_lo, self.p_hi, self.m_lo, self.m_hi)

    def encode(self) -> bytes:
        """Canonical bytes of the record including attestations."""
        sigs = [s.encode() if s is not None else b"" for s in (self.sig_lo, self.sig_hi)]
        return crypto.encode_fields(*self.fields(), *sigs)


def edge_hash(edge: EdgeState) -> Digest:
    """Binary Merkle root over the six positional edge fields padded to eight leaves."""
    level = [_field_leaf(v) for v in edge.fields()] + [EMPTY, EMPTY]
    while len(level) > 1:
        level = [branch_digest(level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]
