"""Wire messages exchanged between nodes, with a canonical byte encoding.

The simulator passes message objects directly; :func:`encode` is the canonical
form used for sizing, hashing and golden fixtures.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

from . import crypto
from .crypto import Digest
from .smt import MerkleProof, NodeInfo
from .state import EdgeState, EdgeStatement, SignedRoot


@dataclass(frozen=True)
class SyncRequest:
    """depth < 0 asks for the latest signed root; otherwise a subtree of ``root``."""

    depth: int = -1
    prefix: int = 0
    root: bytes = b""


@dataclass(frozen=True)
class SubtreeDigests:
    info: NodeInfo


@dataclass(frozen=True)
class LeafTransfer:
    keys: tuple = ()
    edges: tuple = ()
    root: bytes = b""


@dataclass(frozen=True)
class StateAnnounce:
    signed: SignedRoot
    edges: tuple = ()
    proofs: tuple = ()
    origin: bytes = b""  # set when forwarding someone else's root


@dataclass(frozen=True)
class PaymentPropose:
    edge_digest: Digest
    price: int
    delta_in: int
    payer_signed: SignedRoot


@dataclass(frozen=True)
class PaymentAccept:
    next_m: int


@dataclass(frozen=True)
class PaymentCommit:
    edge: EdgeState


@dataclass(frozen=True)
class PaymentAbort:
    reason: str


@dataclass(frozen=True)
class ArbitrageRequest:
    requester_signed: SignedRoot


@dataclass(frozen=True)
class PeerChoice:
    peer: bytes = b""
    initiator: bytes = b""
    direction: str = ""
    delta_in: int = 0
    profit: int = 0
    plan: object = None


@dataclass(frozen=True)
class CyclePropose:
    path: tuple
    delta_in: int
    edges_before: tuple


@dataclass(frozen=True)
class CycleAccept:
    next_m: int


@dataclass(frozen=True)
class CycleCommit:
    edges: tuple


@dataclass(frozen=True)
class EdgeOpenPropose:
    public: bytes
    address: str
    r_proposer: int
    r_peer: int
    next_m: int
    via: bytes = b""


@dataclass(frozen=True)
class EdgeOpenAccept:
    public: bytes
    address: str
    next_m: int


@dataclass(frozen=True)
class EdgeOpenCommit:
    edge: EdgeState


@dataclass(frozen=True)
class MisbehaviorBroadcast:
    proof: object
    hops: int = 1


@dataclass(frozen=True)
class JustifyRequest:
    victim: Digest


@dataclass(frozen=True)
class JustifyReply:
    proof: object = None
    edge: Optional[EdgeState] = None
    retained: Optional[EdgeStatement] = None


@dataclass(frozen=True)
class EdgeProofRequest:
    owner: Digest


@dataclass(frozen=True)
class EdgeProofReply:
    signed: SignedRoot
    edge: Optional[EdgeState]
    proof: MerkleProof


@dataclass(frozen=True)
class Ack:
    ok: bool = True
    error: str = ""


def _value(v) -> bytes:
    if v is None:
        return b""
    if isinstance(v, bool):
        return crypto.encode_int(int(v))
    if isinstance(v, float):
        return crypto.encode_fields(repr(v))
    if isinstance(v, (bytes, int, str)):
        return crypto.encode_fields(v)
    if isinstance(v, MerkleProof):
        return v.to_bytes()
    if isinstance(v, NodeInfo):
        return crypto.encode_fields(v.kind, *[x or b"" for x in v[1:]])
    if isinstance(v, (tuple, list)):
        return crypto.encode_fields(len(v), *[_value(x) for x in v])
    if hasattr(v, "encode"):
        return v.encode()
    if dataclasses.is_dataclass(v):
        return encode(v)
    raise TypeError(f"cannot encode {type(v).__name__}")


def encode(msg) -> bytes:
    """Type tag followed by every field in declaration order, length-prefixed."""
    parts = [type(msg).__name__]
    parts += [_value(getattr(msg, f.name)) for f in dataclasses.fields(msg)]
    return crypto.encode_fields(*parts)
