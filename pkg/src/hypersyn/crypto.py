"""Hashing, canonical field encoding and Ed25519 signatures.

Every digest in the protocol goes through :func:`hash` or :func:`hash_fields`
so that encodings stay bit-exact across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Union

from cryptography.exceptions import InvalidSignature as _CryptoInvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

Digest = bytes  # always 32 bytes
Signature = bytes  # always 64 bytes

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
INT_WIDTH = 16

Field = Union[bytes, int, str]


def hash(data: bytes) -> Digest:  # noqa: A001 - protocol name
    return hashlib.sha256(data).digest()


def encode_int(value: int) -> bytes:
    """16-byte big-endian unsigned encoding."""
    if value < 0:
        raise ValueError("negative integers have no canonical encoding")
    return value.to_bytes(INT_WIDTH, "big")


def encode_fields(*fields: Field) -> bytes:
    """Length-prefixed canonical encoding: each field is (u32 BE length, bytes)."""
    out = bytearray()
    for f in fields:
        if isinstance(f, int):
            raw = encode_int(f)
        elif isinstance(f, str):
            raw = f.encode("utf-8")
        else:
            raw = bytes(f)
        out += len(raw).to_bytes(4, "big")
        out += raw
    return bytes(out)


def hash_fields(*fields: Field) -> Digest:
    return hash(encode_fields(*fields))


def check_digest(value: bytes) -> Digest:
    if len(value) != DIGEST_SIZE:
        raise ValueError(f"digest must be {DIGEST_SIZE} bytes, got {len(value)}")
    return bytes(value)


@dataclass(frozen=True)
class KeyPair:
    seed: bytes = field(repr=False)
    public: bytes
    address: Digest

    @property
    def secret(self) -> Ed25519PrivateKey:
        return _private_key(self.seed)


@lru_cache(maxsize=4096)
def _private_key(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


def keygen(seed: bytes) -> KeyPair:
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    public = _private_key(bytes(seed)).public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(seed=bytes(seed), public=public, address=hash(public))


def sign(secret: Union[KeyPair, Ed25519PrivateKey], message: bytes) -> Signature:
    if isinstance(secret, KeyPair):
        secret = secret.secret
    return secret.sign(message)


@lru_cache(maxsize=1 << 16)
def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    # Pure function; the cache only avoids repeating the curve arithmetic when
    # many simulated peers check the same signed root.
    if len(public) != 32 or len(signature) != SIGNATURE_SIZE:
        return False
    try:
        Ed25519PublicKey.from_public_bytes(bytes(public)).verify(bytes(signature), bytes(message))
    except (_CryptoInvalidSignature, ValueError):
        return False
    return True


def state_message(root: Digest, m: int) -> bytes:
    """The bytes a node signs to commit to (root, counter)."""
    return hash_fields(root, m)


def hash_vectors(inputs: Iterable[bytes]) -> list[dict]:
    return [{"input_hex": x.hex(), "digest_hex": hash(x).hex()} for x in inputs]


def keygen_vectors(seeds: Iterable[bytes]) -> list[dict]:
    rows = []
    for s in seeds:
        kp = keygen(s)
        rows.append({"seed_hex": s.hex(), "public_hex": kp.public.hex(), "address_hex": kp.address.hex()})
    return rows


def write_jsonl(rows: Iterable[dict], path) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def check_vector(row: dict) -> bool:
    """Re-derive one test-vector row and compare."""
    if "digest_hex" in row:
        return hash(bytes.fromhex(row["input_hex"])).hex() == row["digest_hex"]
    kp = keygen(bytes.fromhex(row["seed_hex"]))
    return kp.public.hex() == row["public_hex"] and kp.address.hex() == row["address_hex"]
