import random

import pytest

from asyncba.blackboard import BlackboardHistory
from asyncba.core import HarnessFault


def ones(ctx, col):
    return 1


def writers(cols, fn=ones):
    return {c: fn for c in cols}


class StallAt:
    """Writes columns round-robin and stalls ``cols`` once they hold ``depth`` cells."""

    def __init__(self, cols, depth):
        self.cols = set(cols)
        self.depth = depth

    def board_step(self, ctx):
        for c in sorted(ctx.open):
            if c in self.cols and ctx.board.written(c) >= self.depth:
                return "stall", c
        return "write", min(ctx.open, key=lambda c: (ctx.board.written(c), c))


def test_fair_board_is_full():
    h = BlackboardHistory(7, 2)
    b = h.run_board(1, 4, writers(range(7)))
    assert b.full_columns() == list(range(7))
    assert sum(len(c) for c in b.columns) == 28
    assert h.check_contract() == []
    assert h.rows_charged == 4


def test_two_stalled_columns():
    h = BlackboardHistory(7, 2)
    b = h.run_board(1, 4, writers(range(7)), StallAt({0, 1}, 2))
    assert len(b.full_columns()) == 5
    assert [b.written(0), b.written(1)] == [2, 2]
    assert h.check_contract() == []


def test_three_stalls_fault():
    h = BlackboardHistory(7, 2)
    with pytest.raises(HarnessFault):
        h.run_board(1, 4, writers(range(7)), StallAt({0, 1, 2}, 1))


def test_missing_writers_count_against_stalls():
    h = BlackboardHistory(7, 2)
    with pytest.raises(HarnessFault):
        h.run_board(1, 4, writers(range(7 - 2)), StallAt({0}, 1))
    h = BlackboardHistory(7, 2)
    with pytest.raises(HarnessFault):
        h.run_board(1, 4, writers(range(4)))


def test_out_of_order_board():
    h = BlackboardHistory(4, 1)
    with pytest.raises(HarnessFault):
        h.run_board(2, 1, writers(range(4)))


def test_bad_cell_value():
    h = BlackboardHistory(4, 1)
    with pytest.raises(HarnessFault):
        h.run_board(1, 1, writers(range(4), lambda ctx, col: 2))


def random_board(h, t, rows, seed):
    rng = random.Random(seed)
    return h.run_board(t, rows, writers(range(h.n), lambda ctx, col: rng.choice((-1, 1))))


def test_unperturbed_view_is_truth():
    h = BlackboardHistory(7, 2)
    b = random_board(h, 1, 5, 0)
    v = h.finalize_view(0, 1, erase=())
    assert v.matrix(1) == b.matrix()
    assert v.board_sum(1) == b.total()


def test_single_erasure_shifts_sums_by_that_cell():
    h = BlackboardHistory(7, 2)
    b = random_board(h, 1, 5, 1)
    v = h.finalize_view(2, 1, erase=[3])
    last = b.columns[3][-1]
    brute = sum(sum(x for x in row if x is not None) for row in
                [[v.cell(1, r, c) for c in range(7)] for r in range(5)])
    assert brute == b.total() - last
    assert v.board_sum(1) == brute
    assert v.column_sum(1, 3) == b.column_sum(3) - last
    assert v.cell(1, 4, 3) is None
    # another player still sees the truth
    assert h.finalize_view(0, 1, erase=()).board_sum(1) == b.total()


def test_erasures_only_at_last_write():
    h = BlackboardHistory(7, 2)
    random_board(h, 1, 3, 2)
    view = h.finalize_view(0, 1, erase=[5])
    assert view.erased == frozenset({(1, 2, 5)})


def test_erasure_budget_per_view_and_window():
    h = BlackboardHistory(7, 2)
    random_board(h, 1, 3, 3)
    with pytest.raises(HarnessFault):
        h.finalize_view(0, 1, erase=[0, 1, 2])
    h.finalize_view(0, 1, erase=[0])
    h.finalize_view(1, 1, erase=[1])
    with pytest.raises(HarnessFault):  # union within the window would reach 3
        h.finalize_view(2, 1, erase=[2])
    h.finalize_view(2, 1, erase=[0, 1])  # same positions are free
    random_board(h, 2, 3, 4)
    with pytest.raises(HarnessFault):  # board 2 shares the window of board 1
        h.finalize_view(0, 2, erase=[4])
    h.finalize_view(0, 2, erase=())
    random_board(h, 3, 3, 5)
    h.finalize_view(0, 3, erase=[4, 5])  # a fresh window
    assert h.check_contract() == []


def test_view_finalized_once():
    h = BlackboardHistory(4, 1)
    random_board(h, 1, 2, 0)
    h.finalize_view(0, 1, erase=())
    with pytest.raises(HarnessFault):
        h.finalize_view(0, 1, erase=())


def test_view_horizon():
    h = BlackboardHistory(4, 1)
    random_board(h, 1, 2, 0)
    v = h.finalize_view(0, 1, erase=())
    random_board(h, 2, 2, 1)
    with pytest.raises(IndexError):
        v.column_sum(2, 0)


def test_disclosure():
    h = BlackboardHistory(4, 1)
    random_board(h, 1, 2, 0)
    v0 = h.finalize_view(0, 1, erase=())
    v1 = h.finalize_view(1, 1, erase=[2])
    h.finalize_view(2, 1, erase=())
    h.finalize_view(3, 1, erase=())
    assert h.disclose_view(0, 1) is None  # has not written to board 2 yet
    h.run_board(2, 2, writers([0, 1, 2]))
    assert h.disclose_view(0, 1) == v0
    assert h.disclose_view(0, 1).matrix(1) == h.boards[0].matrix()
    assert h.disclose_view(1, 1).erased == v1.erased
    assert h.disclose_view(3, 1) is None  # column 3 never wrote board 2


def test_dump_format():
    h = BlackboardHistory(3, 1)
    h.run_board(1, 2, writers(range(3)))
    assert h.dump([1]) == "# board 1 rows=2\n 1  1  1\n 1  1  1\n"
