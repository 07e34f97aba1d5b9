"""Triangular ("mutual") arbitrage between three connected nodes.

Planning runs in floating point; execution is exact integer arithmetic with a
profit guard.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence

from .errors import InsufficientDepth, Overflow, StaleReserves, Unprofitable
from .exchange import ReservePair, apply_trade, quote_input, quote_output

FORWARD = "forward"
REVERSE = "reverse"

_CLIMB_LIMIT = 10_000
_LOOKAHEAD = 4


@dataclass(frozen=True)
class TriangleView:
    """Six directed reserves for ordered nodes (i, j, k).

    ``r_xy`` is the reserve of x's credit inside the edge between x and y.
    """

    i: Hashable
    j: Hashable
    k: Hashable
    r_ij: int
    r_ji: int
    r_jk: int
    r_kj: int
    r_ki: int
    r_ik: int

    def __post_init__(self):
        if min(self.r_ij, self.r_ji, self.r_jk, self.r_kj, self.r_ki, self.r_ik) <= 0:
            raise ValueError("all six reserves must be positive")
        if len({self.i, self.j, self.k}) != 3:
            raise ValueError("triangle needs three distinct nodes")

    def reserve(self, x, y) -> int:
        names = {self.i: "i", self.j: "j", self.k: "k"}
        return getattr(self, f"r_{names[x]}{names[y]}")

    def oriented(self, start, direction: str) -> "TriangleView":
        """Relabel so that ``start`` is i and the cycle i -> j -> k -> i is ``direction``."""
        order = [self.i, self.j, self.k]
        idx = order.index(start)
        if direction == FORWARD:
            a, b, c = order[idx], order[(idx + 1) % 3], order[(idx + 2) % 3]
        else:
            a, b, c = order[idx], order[(idx + 2) % 3], order[(idx + 1) % 3]
        r = self.reserve
        return TriangleView(a, b, c, r(a, b), r(b, a), r(b, c), r(c, b), r(c, a), r(a, c))

    def legs(self) -> tuple[ReservePair, ReservePair, ReservePair]:
        """(input reserve, output reserve) for i->j, j->k, k->i."""
        return (
            ReservePair(self.r_ij, self.r_ji),
            ReservePair(self.r_jk, self.r_kj),
            ReservePair(self.r_ki, self.r_ik),
        )


def virtual_reserves_exact(view: TriangleView) -> tuple[Fraction, Fraction]:
    """Collapse the i->j->k->i cycle into one virtual pool (a, a'), exactly."""
    r_ij, r_ji = Fraction(view.r_ij), Fraction(view.r_ji)
    r_jk, r_kj = Fraction(view.r_jk), Fraction(view.r_kj)
    r_ki, r_ik = Fraction(view.r_ki), Fraction(view.r_ik)
    a_ki = r_ji * r_kj / (r_jk + r_ji)
    a_ik = r_ij * r_jk / (r_jk + r_ji)
    a = a_ik * r_ki / (r_ki + a_ki)
    a_prime = r_ik * a_ki / (r_ki + a_ki)
    return a, a_prime


def virtual_reserves(view: TriangleView) -> tuple[float, float]:
    a, a_prime = virtual_reserves_exact(view)
    return float(a), float(a_prime)


def optimal_volume(a, a_prime) -> float:
    """sqrt(a * a') - a, written to avoid cancellation when a' is close to a.

    Exact (Fraction) inputs keep full relative precision even for tiny volumes.
    """
    diff = a_prime - a
    if diff == 0:
        return 0.0
    return float(diff * a) / (float(a) + math.sqrt(float(a) * float(a_prime)))


def cycle_output(legs: Sequence[ReservePair], delta_in: int) -> tuple[int, int, int]:
    out1 = quote_output(legs[0], delta_in)
    out2 = quote_output(legs[1], out1)
    out3 = quote_output(legs[2], out2)
    return out1, out2, out3


def integer_profit(legs: Sequence[ReservePair], delta_in: int) -> int:
    return cycle_output(legs, delta_in)[2] - delta_in


@dataclass(frozen=True)
class CyclePlan:
    start: Hashable
    direction: str
    path: tuple  # (start, second, third)
    delta_in: int
    hop_amounts: tuple[int, int, int]
    expected_profit: int
    legs: tuple[ReservePair, ReservePair, ReservePair]
    real_delta: float = 0.0

    def edges(self) -> list[tuple]:
        """Directed (input node, output node) per leg."""
        a, b, c = self.path
        return [(a, b), (b, c), (c, a)]


def _tighten(legs: Sequence[ReservePair], delta: int) -> tuple[int, int]:
    """Smallest input that still yields the same final output, and its profit.

    Any smaller input then returns strictly less, so profit(delta - 1) <= profit(delta).
    """
    out = cycle_output(legs, delta)[2]
    if out == 0:
        return delta, -delta
    need = out
    for leg in reversed(legs):
        need = quote_input(leg, need)
    need = max(1, need)
    return need, cycle_output(legs, need)[2] - need


def _step_up(legs: Sequence[ReservePair], delta: int) -> Optional[tuple[int, int]]:
    """Left edge of the next higher output step, with its profit."""
    need = cycle_output(legs, delta)[2] + 1
    try:
        for leg in reversed(legs):
            need = quote_input(leg, need)
    except (InsufficientDepth, Overflow):
        return None
    return need, integer_profit(legs, need)


def _step_down(legs: Sequence[ReservePair], delta: int) -> Optional[tuple[int, int]]:
    return _tighten(legs, delta - 1) if delta > 1 else None


def _plan_direction(view: TriangleView, start, direction: str) -> Optional[CyclePlan]:
    ov = view.oriented(start, direction)
    real = optimal_volume(*virtual_reserves_exact(ov))
    if not real > 0:
        return None
    legs = ov.legs()
    lo = max(1, math.floor(real))
    hi = max(1, math.ceil(real))
    best = None
    for cand in sorted({lo, hi}, key=lambda d: (abs(d - real), -d)):
        try:
            profit = integer_profit(legs, cand)
        except Overflow:
            continue
        if best is None or profit > best[1]:
            best = (cand, profit)
    if best is None:
        return None
    delta, profit = best
    # Floored leg outputs make integer profit a staircase. Only the left edge of
    # a step can be a maximum, so walk between edges, looking a few steps ahead
    # each way because a thin middle reserve makes the edges jagged.
    delta, profit = _tighten(legs, delta)
    for _ in range(_CLIMB_LIMIT):
        move = None
        for step in (_step_up, _step_down):
            d = delta
            for _ in range(_LOOKAHEAD):
                nxt = step(legs, d)
                if nxt is None:
                    break
                d = nxt[0]
                if nxt[1] > profit and (move is None or nxt[1] > move[1]):
                    move = nxt
        if move is None:
            break
        delta, profit = move
    if profit <= 0:
        return None
    return CyclePlan(
        start=start,
        direction=direction,
        path=(ov.i, ov.j, ov.k),
        delta_in=delta,
        hop_amounts=cycle_output(legs, delta),
        expected_profit=profit,
        legs=legs,
        real_delta=real,
    )


def best_cycle(view: TriangleView, start) -> Optional[CyclePlan]:
    """Most profitable integer cycle out of ``start`` in either direction, or None."""
    plans = [p for d in (FORWARD, REVERSE) if (p := _plan_direction(view, start, d)) is not None]
    if not plans:
        return None
    return max(plans, key=lambda p: (p.expected_profit, p.direction == FORWARD))


def select_initiator(candidates: Sequence[tuple[bytes, CyclePlan]]) -> Optional[tuple[bytes, CyclePlan]]:
    """The smallest positive delta wins; ties go to the smaller address."""
    valid = [c for c in candidates if c[1].delta_in > 0]
    if not valid:
        return None
    return min(valid, key=lambda c: (c[1].delta_in, bytes(c[0])))


def execute_cycle(
    legs: Sequence[ReservePair], plan: CyclePlan
) -> tuple[tuple[ReservePair, ReservePair, ReservePair], int]:
    """Run the three legs on current reserves (each oriented input -> output).

    Nothing is applied unless all three legs succeed with non-negative profit.
    """
    if tuple(legs) != plan.legs:
        raise StaleReserves("reserves moved since the cycle was planned")
    new1, out1 = apply_trade(legs[0], plan.delta_in)
    new2, out2 = apply_trade(legs[1], out1)
    new3, out3 = apply_trade(legs[2], out2)
    profit = out3 - plan.delta_in
    if profit < 0:
        raise Unprofitable(f"cycle would lose {-profit}")
    return (new1, new2, new3), profit


def forced_plan(view: TriangleView, start, direction: str, delta_in: int) -> CyclePlan:
    """A plan for an arbitrary volume, used to probe execution guards."""
    ov = view.oriented(start, direction)
    legs = ov.legs()
    hops = cycle_output(legs, delta_in)
    return CyclePlan(start, direction, (ov.i, ov.j, ov.k), delta_in, hops, hops[2] - delta_in, legs)


def execute_real(view: TriangleView, delta: float) -> TriangleView:
    """Real-valued execution of i->j->k->i with volume ``delta``; returns the new view."""

    def trade(x: float, y: float, d: float) -> tuple[float, float, float]:
        out = d * y / (x + d)
        return x + d, y - out, out

    r_ij, r_ji, o1 = trade(view.r_ij, view.r_ji, delta)
    r_jk, r_kj, o2 = trade(view.r_jk, view.r_kj, o1)
    r_ki, r_ik, _ = trade(view.r_ki, view.r_ik, o2)
    return _RealView(view.i, view.j, view.k, r_ij, r_ji, r_jk, r_kj, r_ki, r_ik)


@dataclass(frozen=True)
class _RealView(TriangleView):
    """A TriangleView whose reserves are floats; only for real-valued analysis."""
