import random
from decimal import Decimal
from fractions import Fraction

import pytest

import oracles
from hypersyn.arbitrage import (
    FORWARD,
    REVERSE,
    TriangleView,
    best_cycle,
    execute_cycle,
    execute_real,
    forced_plan,
    integer_profit,
    optimal_volume,
    select_initiator,
    virtual_reserves,
    virtual_reserves_exact,
)
from hypersyn.errors import StaleReserves, Unprofitable
from hypersyn.exchange import ReservePair

S = 10**6


def view(*r):
    return TriangleView("i", "j", "k", *r)


def legs_of(v):
    r = {(0, 1): v.r_ij, (1, 0): v.r_ji, (1, 2): v.r_jk, (2, 1): v.r_kj, (2, 0): v.r_ki, (0, 2): v.r_ik}
    return oracles.oriented_legs(r, 0, True)


def test_derived_triangle_scaled():
    v = view(80 * S, 125 * S, 100 * S, 100 * S, 100 * S, 100 * S)
    a, a2 = virtual_reserves_exact(v)
    # by hand: a = 80/2.25 * 100/(100 + 125/2.25) etc.
    assert a == Fraction(80 * S * 100 * S, 225 * S) * 100 * S / (100 * S + Fraction(125 * S * 100 * S, 225 * S))
    real = optimal_volume(a, a2)
    assert real == pytest.approx(40 / 7 * S, rel=1e-12)
    d_oracle, p_oracle = oracles.best_real_cycle(legs_of(v))
    assert real == pytest.approx(float(d_oracle), rel=1e-9)
    plan = best_cycle(v, "i")
    assert plan.direction == FORWARD and plan.path == ("i", "j", "k")
    assert plan.delta_in == 5714287 and plan.expected_profit == 1428571
    assert abs(plan.expected_profit - float(p_oracle)) < 10


def test_derived_triangle_unit_scale():
    v = view(80, 125, 100, 100, 100, 100)
    plan = best_cycle(v, "i")
    # the real optimum is 40/7; floored legs give 0 at 6 and 1 at 7
    assert plan.delta_in == 7 and plan.expected_profit == 1
    legs = plan.legs
    assert integer_profit(legs, 6) == 0 and integer_profit(legs, 8) <= 1


def test_mirror_runs_reverse():
    plan = best_cycle(view(125 * S, 80 * S, 100 * S, 100 * S, 100 * S, 100 * S), "i")
    assert plan.direction == REVERSE and plan.path == ("i", "k", "j")
    assert plan.expected_profit > 0


def test_balanced_triangle_has_no_cycle():
    assert best_cycle(view(*[S] * 6), "i") is None
    assert optimal_volume(Fraction(5), Fraction(5)) == 0.0


def test_virtual_reserves_float_matches_exact():
    v = view(3, 5, 7, 11, 13, 17)
    assert virtual_reserves(v) == pytest.approx(tuple(float(x) for x in virtual_reserves_exact(v)))


def test_random_triangles_against_oracle():
    rng = random.Random(77)
    checked = 0
    for _ in range(150):
        r = [rng.randint(10**4, 10**8) for _ in range(6)]
        v = view(*r)
        for direction in (FORWARD, REVERSE):
            ov = v.oriented("i", direction)
            real = optimal_volume(*virtual_reserves_exact(ov))
            d, _ = oracles.best_real_cycle(legs_of(ov))
            if d > 0:
                assert abs(real - float(d)) <= 1e-6 * max(1.0, float(d))
                checked += 1
            else:
                assert real <= 0
        plan = best_cycle(v, "i")
        if plan is not None:
            p = plan.expected_profit
            assert p > 0
            assert p >= integer_profit(plan.legs, plan.delta_in + 1)
            assert p >= integer_profit(plan.legs, plan.delta_in - 1)
    assert checked > 50


def test_real_execution_reaches_fixed_point():
    v = view(80 * S, 125 * S, 100 * S, 100 * S, 100 * S, 100 * S)
    after = execute_real(v, optimal_volume(*virtual_reserves_exact(v)))
    a, a2 = virtual_reserves_exact(after)
    assert abs(float(a2 - a)) / float(a) < 1e-9


def test_integer_execution_and_guards():
    v = view(80 * S, 125 * S, 100 * S, 100 * S, 100 * S, 100 * S)
    plan = best_cycle(v, "i")
    new_legs, profit = execute_cycle(plan.legs, plan)
    assert profit == plan.expected_profit
    for old, new in zip(plan.legs, new_legs):
        assert new.product >= old.product
    moved = (ReservePair(plan.legs[0].r_a + 1, plan.legs[0].r_b),) + plan.legs[1:]
    with pytest.raises(StaleReserves):
        execute_cycle(moved, plan)
    bad = forced_plan(v, "i", FORWARD, 90 * S)
    with pytest.raises(Unprofitable):
        execute_cycle(bad.legs, bad)


def test_select_initiator_smallest_delta_then_address():
    v = view(80 * S, 125 * S, 100 * S, 100 * S, 100 * S, 100 * S)
    p_big = forced_plan(v, "i", FORWARD, 10)
    p_small = forced_plan(v, "i", FORWARD, 3)
    assert select_initiator([(b"\x02", p_big), (b"\x03", p_small)])[0] == b"\x03"
    assert select_initiator([(b"\x05", p_small), (b"\x04", p_small)])[0] == b"\x04"
    assert select_initiator([]) is None


def test_view_validation():
    with pytest.raises(ValueError):
        view(0, 1, 1, 1, 1, 1)
    with pytest.raises(ValueError):
        TriangleView("i", "i", "k", 1, 1, 1, 1, 1, 1)


def test_oracle_golden_section_sanity():
    # one hop with a' > a: profit d*a'/(a+d) - d peaks at sqrt(a a') - a
    d, _ = oracles.golden_max([(100, 400)], Decimal(400))
    assert abs(float(d) - 100.0) < 1e-9


def test_max_integer_profit_oracle_matches_brute_force():
    rng = random.Random(8)
    for _ in range(200):
        legs = [(rng.randint(1, 300), rng.randint(1, 300)) for _ in range(3)]
        brute = max([0] + [oracles.integer_profit(legs, d) for d in range(1, 2000)])
        assert oracles.max_integer_profit(legs) == brute


def test_plan_sits_on_a_step_edge():
    """Integer profit is a staircase; the plan is the cheapest input for its output."""
    rng = random.Random(21)
    for _ in range(300):
        r = [int(10 ** rng.uniform(2, 5)) for _ in range(6)]
        plan = best_cycle(view(*r), "i")
        if plan is None:
            continue
        legs = [(x.r_a, x.r_b) for x in plan.legs]
        out = oracles.integer_profit(legs, plan.delta_in) + plan.delta_in
        assert plan.expected_profit == out - plan.delta_in
        if plan.delta_in > 1:
            assert oracles.integer_profit(legs, plan.delta_in - 1) + plan.delta_in - 1 < out
        assert oracles.integer_profit(legs, plan.delta_in + 1) <= plan.expected_profit
