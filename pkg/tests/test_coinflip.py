import pytest

from asyncba.blackboard import BlackboardHistory
from asyncba.coinflip import (bias_board, clamp, coin_board, coin_output, column_sum_clamped,
                              stage1_value, validate_coin_claim)
from asyncba.core import InvariantViolation


def build(n, f, odd_cols, even_cols):
    """Boards 1 (bias) and 2 (coin) from explicit column contents."""
    h = BlackboardHistory(n, f)
    for t, cols in ((1, odd_cols), (2, even_cols)):
        rows = max(len(c) for c in cols)
        it = {c: iter(cols[c]) for c in range(n)}
        h.run_board(t, rows, {c: (lambda ctx, col: next(it[col])) for c in range(n)})
    return h


def test_board_indices():
    assert (bias_board(1), coin_board(1)) == (1, 2)
    assert (bias_board(5), coin_board(5)) == (9, 10)


@pytest.mark.parametrize("vals, want", [
    ([None] * 5, 0),
    ([None, None, 1, None, None], 1),
    ([-1, None, -1], -1),
])
def test_stage1_value(vals, want):
    assert stage1_value(vals) == want


def test_stage1_conflict():
    with pytest.raises(InvariantViolation):
        stage1_value([1, -1, None])


def test_clamped_column_sums():
    h = build(3, 0, [[0] * 7] * 3, [[1, 1, -1, 0, 0, 0, 0], [1] * 7, [0] * 7])
    v = h.true_view(2)
    assert column_sum_clamped(v, 2, 0, 5) == 1
    assert column_sum_clamped(v, 2, 1, 5) == 5
    assert column_sum_clamped(v, 2, 2, 5) == 0
    assert clamp(-9, 5) == -5


def test_full_bias_forces_output():
    n, m0 = 7, 3
    # coin board with a strongly negative weighted sum that still stays within 21 - 1
    even = [[-1, -1, -1]] * 6 + [[-1, -1, 0]]
    h = build(n, 2, [[1] * m0] * n, even)
    e = coin_output(0, h.true_view(2), 1, [1.0] * n, xmax=3)
    assert e.bias == 21
    assert e.sigma == -20
    assert e.output == 1


def test_empty_bias_weighted_sum():
    n = 7
    even = [[1, 1], [1, 0], [-1, 0], [0, 0], [0, 0], [0, 0], [0, 0]]
    h = build(n, 2, [[0]] * n, even)
    e = coin_output(3, h.true_view(2), 1, [1.0] * n, xmax=5)
    assert (e.bias, e.sigma, e.output) == (0, 2, 1)


def test_zero_weight_column_ignored():
    n = 4
    h = build(n, 1, [[0]] * n, [[-1, -1], [1, 0], [0, 0], [0, 0]])
    e = coin_output(0, h.true_view(2), 1, [0.0, 1.0, 1.0, 1.0], xmax=5)
    assert e.sigma == 1 and e.output == 1


def test_clamp_applied_before_weighting():
    n = 4
    h = build(n, 1, [[0] * 1] * n, [[1] * 6, [-1] * 2 + [0] * 4, [0] * 6, [0] * 6])
    e = coin_output(0, h.true_view(2), 1, [0.5, 1.0, 1.0, 1.0], xmax=3)
    assert e.sigma == pytest.approx(0.5 * 3 - 2)
    assert e.raw_sigma == pytest.approx(0.5 * 6 - 2)


@pytest.mark.parametrize("total, claim, want", [
    (10, -1, False),
    (1, -1, True),
    (10, 1, True),
    (-10, -1, True),
    (-2, 1, True),
    (-2.5, 1, False),
    (2, -1, False),
    (1.99, -1, True),
    (0, 0, False),
])
def test_coin_claim_band(total, claim, want):
    assert validate_coin_claim(total, claim, 2) is want
