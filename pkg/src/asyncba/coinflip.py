"""Two-stage global coin: a bias board followed by a weighted coin board."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .blackboard import BlackboardView
from .core import InvariantViolation, Value, sgn


def bias_board(t: int) -> int:
    """Odd board written in stage 1 of iteration ``t``."""
    return 2 * t - 1


def coin_board(t: int) -> int:
    """Even board holding the coin flips of iteration ``t``."""
    return 2 * t


def stage1_value(values: Iterable[Value]) -> int:
    """``v*`` if any validated stage-1 message carries it, else 0."""
    seen = {v for v in values if v is not None}
    if len(seen) > 1:
        raise InvariantViolation(f"stage-1 set carries conflicting values {sorted(seen)}")
    return seen.pop() if seen else 0


def clamp(x: int, xmax: int) -> int:
    return max(-xmax, min(xmax, x))


def column_sum_clamped(view: BlackboardView, board: int, q: int, xmax: int) -> int:
    return clamp(view.column_sum(board, q), xmax)


@dataclass(frozen=True)
class CoinEntry:
    player: int
    bias: int
    sigma: float
    raw_sigma: float
    output: int

    @property
    def total(self) -> float:
        return self.bias + self.sigma


def coin_output(p: int, view: BlackboardView, t: int, weights: Sequence[float], xmax: int) -> CoinEntry:
    """Player ``p``'s coin for iteration ``t`` from its view through the coin board."""
    n = view.history.n
    bias = view.board_sum(bias_board(t))
    sigma = 0.0
    raw = 0.0
    cb = coin_board(t)
    for q in range(n):
        w = weights[q]
        if w == 0.0:
            continue
        s = view.column_sum(cb, q)
        sigma += w * clamp(s, xmax)
        raw += w * s
    return CoinEntry(p, bias, sigma, raw, sgn(bias + sigma))


def validate_coin_claim(validator_total: float, claimed: int, f: int) -> bool:
    """Could some view within ``f`` unit cells of the validator's have sign ``claimed``?

    Views differ from each other in at most ``f`` cells, each moving the total
    by at most 1, so another player's total lies in ``[total - f, total + f]``.
    """
    if claimed == 1:
        return validator_total >= -f
    if claimed == -1:
        return validator_total < f
    return False
