import math

import pytest

from asyncba.core import BOT, MINUS, PLUS, ParamError, as_cell, derive_params, sgn


@pytest.mark.parametrize("x, want", [(0, PLUS), (-3.5, MINUS), (7, PLUS), (-1e-300, MINUS)])
def test_sgn_convention(x, want):
    assert sgn(x) == want


def test_sgn_rejects_nan():
    with pytest.raises(ValueError):
        sgn(math.nan)


def test_bot_counts_as_zero():
    assert as_cell(BOT) == 0
    assert as_cell(-1) == -1


def test_desk_profile():
    p = derive_params(2, 0.5, 16, 32, 2)
    assert p.n == 7
    assert p.k_max == 6
    assert p.w_min == pytest.approx(math.sqrt(7) / 32)
    assert p.w_min == pytest.approx(0.0827, abs=1e-4)
    c_ln_n = 2 * math.log(7)
    assert p.m0 == math.ceil(math.sqrt(16 * c_ln_n)) == 8
    assert p.xmax == p.m0
    assert p.beta == pytest.approx(16 * math.sqrt(32 * c_ln_n ** 3))
    assert p.quorum == 5


def test_n10_profile():
    p = derive_params(3, 1 / 3, 16, 32, 2)
    assert (p.n, p.k_max) == (10, 9)


def test_odd_and_even_rows():
    p = derive_params(2, 0.5, 16, 32, 2)
    assert p.rows(1) == p.m0
    assert p.rows(2) == 16


def test_non_integral_n_rounds_up():
    assert derive_params(3, 0.4, 4, 4, 1).n == 11  # 10.2 -> 11


@pytest.mark.parametrize("args", [
    (2, 0.6, 16, 32, 2),
    (2, 0.4, 16, 32, 2),  # below 1/f
    (0, 0.5, 16, 32, 2),
    (2, 0.5, 0, 32, 2),
    (2, 0.5, 16, 0, 2),
    (2, 0.5, 16, 32, 0),
    (2.5, 0.5, 16, 32, 2),
])
def test_rejects_bad_params(args):
    with pytest.raises(ParamError):
        derive_params(*args)
