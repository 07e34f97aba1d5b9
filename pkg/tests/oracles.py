"""Independent reference computations used to derive expected values.

None of these import the package's math; they recompute from definitions with
exact rationals, high-precision decimals or direct recursion.
"""

from __future__ import annotations

import hashlib
import math
from decimal import Decimal, getcontext
from fractions import Fraction

EMPTY = bytes(32)


def sha(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def enc(*fields) -> bytes:
    out = b""
    for f in fields:
        if isinstance(f, int):
            raw = f.to_bytes(16, "big")
        elif isinstance(f, str):
            raw = f.encode()
        else:
            raw = bytes(f)
        out += len(raw).to_bytes(4, "big") + raw
    return out


# -- sparse Merkle tree by direct recursion ----------------------------------


def bits(key: bytes) -> str:
    return bin(int.from_bytes(key, "big"))[2:].zfill(256)


def smt_root(items: dict) -> bytes:
    """Root by definition: a lone key is a leaf, otherwise split on the next bit."""

    def rec(keys: list, depth: int) -> bytes:
        if not keys:
            return EMPTY
        if len(keys) == 1:
            k = keys[0]
            return sha(b"\x00" + k + items[k])
        left = [k for k in keys if bits(k)[depth] == "0"]
        right = [k for k in keys if bits(k)[depth] == "1"]
        return sha(b"\x01" + rec(left, depth + 1) + rec(right, depth + 1))

    return rec(sorted(items), 0)


# -- constant product with exact rationals -----------------------------------


def quote_output(r_a: int, r_b: int, d_in: int) -> int:
    return math.floor(Fraction(d_in * r_b, r_a + d_in))


def quote_input(r_a: int, r_b: int, d_out: int) -> int:
    return math.ceil(Fraction(r_a * d_out, r_b - d_out))


# -- arbitrage: direct maximisation of the composed cycle --------------------

getcontext().prec = 60


def cycle_out_real(legs, d: Decimal) -> Decimal:
    x = d
    for r_in, r_out in legs:
        r_in, r_out = Decimal(r_in), Decimal(r_out)
        x = x * r_out / (r_in + x)
    return x


def golden_max(legs, hi: Decimal, iters: int = 260) -> tuple[Decimal, Decimal]:
    """Maximise f(d) = out(d) - d over [0, hi] by golden-section search."""
    phi = (Decimal(5).sqrt() - 1) / 2
    lo = Decimal(0)
    a = hi - phi * (hi - lo)
    b = lo + phi * (hi - lo)
    fa = cycle_out_real(legs, a) - a
    fb = cycle_out_real(legs, b) - b
    for _ in range(iters):
        if fa < fb:
            lo, a, fa = a, b, fb
            b = lo + phi * (hi - lo)
            fb = cycle_out_real(legs, b) - b
        else:
            hi, b, fb = b, a, fa
            a = hi - phi * (hi - lo)
            fa = cycle_out_real(legs, a) - a
    d = (lo + hi) / 2
    return d, cycle_out_real(legs, d) - d


def oriented_legs(r, start: int, forward: bool):
    """r maps (x, y) -> reserve of x's credit in the x-y edge; nodes are 0, 1, 2."""
    order = [0, 1, 2]
    a = order[start]
    b, c = (order[(start + 1) % 3], order[(start + 2) % 3]) if forward else (order[(start + 2) % 3], order[(start + 1) % 3])
    return [(r[(a, b)], r[(b, a)]), (r[(b, c)], r[(c, b)]), (r[(c, a)], r[(a, c)])]


def best_real_cycle(legs) -> tuple[Decimal, Decimal]:
    """(argmax d, max profit); (0, 0) when the cycle is never profitable."""
    # marginal rate at zero volume decides whether any positive volume helps
    rate = Decimal(1)
    for r_in, r_out in legs:
        rate *= Decimal(r_out) / Decimal(r_in)
    if rate <= 1:
        return Decimal(0), Decimal(0)
    # the optimum sits below sqrt(a * a'), which is below the largest reserve
    hi = Decimal(max(max(l) for l in legs))
    return golden_max(legs, hi)


def integer_profit(legs, d: int) -> int:
    x = d
    for r_in, r_out in legs:
        x = quote_output(r_in, r_out, x)
    return x - d


def edge_hash(r_lo, r_hi, p_lo, p_hi, m_lo, m_hi) -> bytes:
    leaves = [sha(b"\x00" + enc(v)) for v in (r_lo, r_hi, p_lo, p_hi, m_lo, m_hi)] + [EMPTY, EMPTY]
    while len(leaves) > 1:
        leaves = [sha(b"\x01" + leaves[i] + leaves[i + 1]) for i in range(0, len(leaves), 2)]
    return leaves[0]


def file_encoding(node_id, public, root, m, sig, peers) -> bytes:
    entries = [enc(pid, addr) for pid, addr in peers]
    return enc(node_id, public, root, m, sig, len(peers), *entries)


def max_integer_profit(legs, iters: int = 80) -> int:
    """Largest integer cycle profit over all inputs d >= 1 (0 if none is positive).

    Floored outputs never exceed the real ones, so integer profit at d is at most
    the real profit f(d); only the interval where f(d) >= 1 needs scanning.
    """
    rate = Decimal(1)
    for r_in, r_out in legs:
        rate *= Decimal(r_out) / Decimal(r_in)
    if rate <= 1:
        return 0
    hi = Decimal(max(max(l) for l in legs))
    d_star, f_star = golden_max(legs, hi, iters)
    # f_star slightly underestimates the maximum; keep a margin before skipping the scan
    if f_star < Decimal("0.999"):
        return 0

    def f(d):
        return cycle_out_real(legs, d) - d

    def edge(a, b, rising):
        for _ in range(iters):
            mid = (a + b) / 2
            if (f(mid) >= 1) == rising:
                b = mid
            else:
                a = mid
        return b if rising else a

    lo = edge(Decimal(0), d_star, True)
    up = edge(d_star, hi, False)
    best = 0
    for d in range(max(1, math.floor(lo)), math.ceil(up) + 1):
        best = max(best, integer_profit(legs, d))
    return best
