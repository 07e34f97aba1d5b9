import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from hypersyn.errors import InsufficientDepth, Overflow
from hypersyn.exchange import U128_MAX, ReservePair, apply_trade, quote_input, quote_output

reserve = st.integers(1, 10**15)


def test_worked_payment():
    res = ReservePair(80, 125)
    d_in = quote_input(res, 25)
    assert d_in == 20
    after, out = apply_trade(res, d_in)
    assert out == 25 and after == ReservePair(100, 100)


@settings(max_examples=300, deadline=None)
@given(reserve, reserve, st.integers(0, 10**15))
def test_output_matches_oracle_and_keeps_product(r_a, r_b, d):
    res = ReservePair(r_a, r_b)
    out = quote_output(res, d)
    assert out == oracles.quote_output(r_a, r_b, d)
    after, _ = apply_trade(res, d)
    assert after.product >= res.product
    if (d * r_b) % (r_a + d) == 0:
        assert after.product == res.product


@settings(max_examples=300, deadline=None)
@given(reserve, st.integers(2, 10**15), st.data())
def test_input_is_minimal(r_a, r_b, data):
    d_out = data.draw(st.integers(0, r_b - 1))
    res = ReservePair(r_a, r_b)
    d_in = quote_input(res, d_out)
    assert d_in == oracles.quote_input(r_a, r_b, d_out)
    assert quote_output(res, d_in) >= d_out
    if d_in > 0:
        assert quote_output(res, d_in - 1) < d_out


def test_zero_amounts():
    assert quote_output(ReservePair(5, 7), 0) == 0
    assert quote_input(ReservePair(5, 7), 0) == 0


def test_depth_and_range_errors():
    with pytest.raises(InsufficientDepth):
        quote_input(ReservePair(10, 10), 10)
    with pytest.raises(InsufficientDepth):
        quote_output(ReservePair(0, 10), 1)
    with pytest.raises(ValueError):
        quote_output(ReservePair(10, 10), -1)
    with pytest.raises(Overflow):
        quote_output(ReservePair(U128_MAX, 10), 1)
    with pytest.raises(Overflow):
        apply_trade(ReservePair(U128_MAX - 1, 10), 5)


def test_flipped():
    assert ReservePair(1, 2).flipped() == ReservePair(2, 1)
