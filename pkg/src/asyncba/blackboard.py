"""Iterated blackboard at the contract level.

The adversary picks, cell by cell, which open column is written next and may
stall up to ``f`` columns per board. After a board completes, every player's
view is fixed by erasing (showing as BOT) some cells that are currently a
player's last write. Erased positions are budgeted per ambiguity window: the
union of positions erased in any view of the snapshots of one window is at most
``f``, so any two views of a window differ in at most ``f`` cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional

from .core import HarnessFault

Position = tuple  # (board, row, col); board 1-based, row 0-based


@dataclass
class Board:
    index: int
    rows: int
    n: int
    columns: list = field(default_factory=list)
    writers: frozenset = frozenset()
    stalled: set = field(default_factory=set)
    start_time: float = 0.0
    end_time: float = 0.0
    complete: bool = False
    order: list = field(default_factory=list)  # columns in write order

    def __post_init__(self):
        if not self.columns:
            self.columns = [[] for _ in range(self.n)]

    def written(self, col: int) -> int:
        return len(self.columns[col])

    def is_full(self, col: int) -> bool:
        return len(self.columns[col]) == self.rows

    def full_columns(self) -> list[int]:
        return [c for c in range(self.n) if self.is_full(c)]

    def column_sum(self, col: int) -> int:
        return sum(self.columns[col])

    def total(self) -> int:
        return sum(sum(c) for c in self.columns)

    def matrix(self) -> list[list[int]]:
        """Rows of signed integers, BOT as 0."""
        return [[col[r] if r < len(col) else 0 for col in self.columns] for r in range(self.rows)]


@dataclass(frozen=True)
class BlackboardView:
    owner: int
    up_to: int
    erased: frozenset
    history: "BlackboardHistory" = field(compare=False, repr=False)

    def _adjust(self, board: int, col: int) -> int:
        return sum(self.history.boards[b - 1].columns[c][r]
                   for (b, r, c) in self.erased if b == board and c == col)

    def cell(self, board: int, row: int, col: int) -> Optional[int]:
        if board > self.up_to:
            raise IndexError(f"board {board} is beyond view horizon {self.up_to}")
        if (board, row, col) in self.erased:
            return None
        column = self.history.boards[board - 1].columns[col]
        return column[row] if row < len(column) else None

    def column(self, board: int, col: int) -> list:
        rows = self.history.boards[board - 1].rows
        return [self.cell(board, r, col) for r in range(rows)]

    def column_sum(self, board: int, col: int) -> int:
        if board > self.up_to:
            raise IndexError(f"board {board} is beyond view horizon {self.up_to}")
        true = self.history.boards[board - 1].column_sum(col)
        if not self.erased:
            return true
        return true - self._adjust(board, col)

    def board_sum(self, board: int) -> int:
        return sum(self.column_sum(board, c) for c in range(self.history.n))

    def matrix(self, board: int) -> list[list[int]]:
        b = self.history.boards[board - 1]
        out = []
        for r in range(b.rows):
            out.append([0 if (v := self.cell(board, r, c)) is None else v for c in range(b.n)])
        return out


class BoardContext:
    """What an adversary sees while a board is being filled."""

    def __init__(self, history: "BlackboardHistory", board: Board, open_cols: set, info=None):
        self.history = history
        self.board = board
        self.open = open_cols
        self.info = info  # the simulation, for full-information strategies

    @property
    def partial_budget(self) -> int:
        """How many more columns may still be stalled."""
        b = self.board
        return self.history.f - (self.history.n - len(b.writers)) - len(b.stalled)


WriteSupplier = Callable[[BoardContext, int], int]


class BlackboardHistory:
    """True matrix sequence, last-write positions, and every finalized view."""

    def __init__(self, n: int, f: int, window: int = 2):
        self.n = n
        self.f = f
        self.window = window
        self.boards: list[Board] = []
        self.last: dict[int, Position] = {}
        self.snapshot_last: dict[int, dict] = {}
        self.views: dict[tuple, BlackboardView] = {}
        self.window_erased: dict[int, set] = {}
        self.rows_charged = 0

    def __len__(self) -> int:
        return len(self.boards)

    def board(self, t: int) -> Board:
        return self.boards[t - 1]

    def window_of(self, t: int) -> int:
        return (t - 1) // self.window

    def run_board(self, t: int, rows: int, writers: Mapping[int, WriteSupplier],
                  adversary=None, time: float = 0.0, info=None) -> Board:
        """Fill board ``t``; ``writers`` maps each participating column to its cell source."""
        if t != len(self.boards) + 1:
            raise HarnessFault(f"board {t} built out of order (have {len(self.boards)})")
        if self.boards and not self.boards[-1].complete:
            raise HarnessFault(f"board {t - 1} is not complete")
        if self.n - len(writers) > self.f:
            raise HarnessFault(f"board {t}: only {len(writers)} writers, need {self.n - self.f}")
        board = Board(t, rows, self.n, writers=frozenset(writers), start_time=time)
        self.boards.append(board)
        open_cols = set(writers)
        ctx = BoardContext(self, board, open_cols, info)
        while open_cols:
            if adversary is None:
                op, col = "write", min(open_cols)
            else:
                op, col = adversary.board_step(ctx)
            if col not in open_cols:
                raise HarnessFault(f"board {t}: column {col} is not open")
            if op == "stall":
                if ctx.partial_budget <= 0:
                    raise HarnessFault(f"board {t}: more than f={self.f} partial columns")
                board.stalled.add(col)
                open_cols.discard(col)
                continue
            if op != "write":
                raise HarnessFault(f"unknown board action {op!r}")
            value = writers[col](ctx, col)
            if value not in (-1, 0, 1):
                raise HarnessFault(f"cell value {value!r} not in {{-1,0,1}}")
            board.columns[col].append(value)
            board.order.append(col)
            self.last[col] = (t, len(board.columns[col]) - 1, col)
            if board.is_full(col):
                open_cols.discard(col)
        board.complete = True
        board.end_time = time + rows
        self.rows_charged += rows
        self.snapshot_last[t] = dict(self.last)
        return board

    def finalize_view(self, p: int, t: int, adversary=None,
                      erase: Optional[Iterable[int]] = None, info=None) -> BlackboardView:
        """Fix player ``p``'s view of boards ``1..t``.

        ``erase`` (or ``adversary.erasures``) lists columns whose last write is
        hidden from ``p``.
        """
        if t > len(self.boards) or not self.boards[t - 1].complete:
            raise HarnessFault(f"board {t} not complete")
        if (p, t) in self.views:
            raise HarnessFault(f"view ({p}, {t}) already finalized")
        if erase is None and adversary is not None:
            erase = adversary.erasures(p, t, self, info)
        cols = sorted(set(erase or ()))
        snap = self.snapshot_last[t]
        positions = []
        for col in cols:
            pos = snap.get(col)
            if pos is None:
                raise HarnessFault(f"column {col} has no write to erase")
            positions.append(pos)
        if len(positions) > self.f:
            raise HarnessFault(f"view ({p}, {t}) erases {len(positions)} > f={self.f} cells")
        w = self.window_of(t)
        union = self.window_erased.setdefault(w, set())
        if len(union | set(positions)) > self.f:
            raise HarnessFault(
                f"view ({p}, {t}): ambiguity window {w} would hold "
                f"{len(union | set(positions))} > f={self.f} erased cells")
        union.update(positions)
        view = BlackboardView(p, t, frozenset(positions), self)
        self.views[(p, t)] = view
        return view

    def disclose_view(self, writer: int, t: int) -> Optional[BlackboardView]:
        """The view ``writer`` fixed for board ``t``, known once it wrote to ``t + 1``."""
        if t + 1 > len(self.boards) or self.boards[t].written(writer) == 0:
            return None
        return self.views.get((writer, t))

    def true_view(self, t: int) -> BlackboardView:
        return BlackboardView(-1, t, frozenset(), self)

    def dump(self, boards: Iterable[int]) -> str:
        lines = []
        for t in boards:
            lines.append(f"# board {t} rows={self.boards[t - 1].rows}")
            for row in self.boards[t - 1].matrix():
                lines.append(" ".join(f"{v:2d}" for v in row))
        return "\n".join(lines) + "\n"

    def check_contract(self, t: Optional[int] = None) -> list[str]:
        """Return violations of the blackboard guarantees (empty when all hold)."""
        problems = []
        boards = [self.boards[t - 1]] if t else self.boards
        for b in boards:
            for c, col in enumerate(b.columns):
                if len(col) > b.rows:
                    problems.append(f"board {b.index} column {c} overfull")
            if b.complete and len(b.full_columns()) < self.n - self.f:
                problems.append(f"board {b.index}: {len(b.full_columns())} full columns < n-f")
        per_window: dict[int, set] = {}
        if t:
            items = [((p, t), self.views[(p, t)]) for p in range(self.n) if (p, t) in self.views]
        else:
            items = list(self.views.items())
        for (p, s), view in items:
            if len(view.erased) > self.f:
                problems.append(f"view ({p},{s}) erases {len(view.erased)} cells")
            snap = self.snapshot_last[s]
            for pos in view.erased:
                if snap.get(pos[2]) != pos:
                    problems.append(f"view ({p},{s}) erases non-last cell {pos}")
            per_window.setdefault(self.window_of(s), set()).update(view.erased)
        for w, union in per_window.items():
            if len(union) > self.f:
                problems.append(f"window {w}: {len(union)} distinct erased cells")
        return problems
