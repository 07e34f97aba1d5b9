"""Constant-product credit exchange on a single edge, in exact integers.

Outputs are floored and inputs ceiled, so rounding always favours the reserve
and the reserve product never decreases.
"""

from __future__ import annotations

from typing import NamedTuple

from .errors import InsufficientDepth, Overflow

U128_MAX = (1 << 128) - 1
U256_MAX = (1 << 256) - 1


def _check(x: int, limit: int = U128_MAX) -> int:
    if x < 0:
        raise ValueError("credit amounts are non-negative")
    if x > limit:
        raise Overflow(f"{x} exceeds {limit.bit_length()}-bit range")
    return x


class ReservePair(NamedTuple):
    """Reserves inside one edge: ``r_a`` is the input side, ``r_b`` the output side."""

    r_a: int
    r_b: int

    @property
    def product(self) -> int:
        return self.r_a * self.r_b

    def flipped(self) -> "ReservePair":
        return ReservePair(self.r_b, self.r_a)


def _active(reserves: ReservePair) -> None:
    _check(reserves.r_a)
    _check(reserves.r_b)
    if reserves.r_a <= 0 or reserves.r_b <= 0:
        raise InsufficientDepth("edge reserves must be strictly positive")


def quote_output(reserves: ReservePair, delta_in: int) -> int:
    """Credit removed from ``r_b`` when ``delta_in`` is deposited into ``r_a``."""
    _active(reserves)
    _check(delta_in)
    num = _check(delta_in * reserves.r_b, U256_MAX)
    return num // _check(reserves.r_a + delta_in)


def quote_input(reserves: ReservePair, delta_out: int) -> int:
    """Smallest deposit into ``r_a`` that releases at least ``delta_out`` of ``r_b``."""
    _active(reserves)
    _check(delta_out)
    if delta_out >= reserves.r_b:
        raise InsufficientDepth(f"cannot take {delta_out} out of a reserve of {reserves.r_b}")
    num = _check(reserves.r_a * delta_out, U256_MAX)
    return -(-num // (reserves.r_b - delta_out))


def apply_trade(reserves: ReservePair, delta_in: int) -> tuple[ReservePair, int]:
    out = quote_output(reserves, delta_in)
    new = ReservePair(_check(reserves.r_a + delta_in), reserves.r_b - out)
    return new, out
