"""Adversary strategies: scheduling, corruption, board cell order and view erasures.

Every hook receives the live :class:`~asyncba.agreement.Simulation` (full
information). Budgets are enforced by the simulation and the blackboard, which
raise :class:`~asyncba.core.HarnessFault` on any overrun.
"""

from __future__ import annotations

import itertools
import math
from typing import Iterable, Optional

import numpy as np

from .coinflip import clamp
from .core import HarnessFault, sgn
from .netsim import Kind

L1, L2, L3, COIN = "L1", "L2", "L3", "C"


class Adversary:
    """Fair baseline: FIFO delivery, uniformly random cell order, no corruption."""

    name = "fair"

    def bind(self, sim, rng) -> None:
        self.sim = sim
        self.rng = rng

    # corruption
    def initial_corruptions(self) -> Iterable[int]:
        return ()

    def corruptions(self, t: int) -> Iterable[int]:
        return ()

    # scheduling
    def hold(self, delivery, net) -> bool:
        return False

    def pick(self, ready, net) -> int:
        return 0

    def release(self, held, forced: bool) -> list:
        return list(held) if forced else []

    # boards
    def board_step(self, ctx) -> tuple[str, int]:
        return "write", self.rng.choice(sorted(ctx.open))

    def cell_value(self, ctx, col: int) -> int:
        return self.rng.choice((-1, 1))

    def _search_mirror(self, drift: float, bad: list, raw: list, base: list):
        """Pick corrupt column sums so erasing at most f cells can split the outputs.

        Among splittable choices the least conspicuous (smallest total |sum|)
        wins; when none is splittable, the total closest to zero.
        """
        m, xmax, f = self.sim.params.m, self.sim.params.xmax, self.f
        w = np.array([self.sim.weights[b] for b in bad])
        grid = np.array(np.meshgrid(*[raw] * len(bad), indexing="ij")).reshape(len(bad), -1).T
        cx = np.clip(grid, -xmax, xmax)
        total = drift + cx @ w
        up = total >= 0
        last = np.where(up[:, None], np.where(grid > -m, 1, -1), np.where(grid < m, -1, 1))
        bad_delta = w * (cx - np.clip(grid - last, -xmax, xmax))
        deltas = np.hstack([np.tile(np.asarray(base, dtype=float), (len(grid), 1)), bad_delta])
        top_pos = -np.sort(-np.where(deltas > 0, deltas, 0.0), axis=1)[:, :f].sum(axis=1)
        top_neg = -np.sort(np.where(deltas < 0, deltas, 0.0), axis=1)[:, :f].sum(axis=1)
        ok = np.where(up, top_pos > total, top_neg >= -total)
        size = np.abs(grid).sum(axis=1)
        key2 = np.where(ok, size, np.abs(total))
        order = np.lexsort((np.abs(total), key2, ~ok))
        i = int(order[0])
        if ok[i]:
            self.steer_stats["split_planned"] += 1
        else:
            self.steer_stats["split_infeasible"] += 1
        return (None, tuple(int(x) for x in grid[i]), tuple(int(v) for v in last[i]))

    def erasures(self, p: int, board: int, history, info) -> Iterable[int]:
        return ()

    def on_boards(self, t: int) -> None:
        pass


FairAdversary = Adversary


def fair_adversary() -> Adversary:
    return Adversary()


class CrashAdversary(Adversary):
    """Players in ``crash_set`` never get a message out and never write a cell."""

    name = "crash"

    def __init__(self, crash_set: Optional[Iterable[int]] = None):
        self.crash_set = None if crash_set is None else frozenset(crash_set)

    def bind(self, sim, rng) -> None:
        super().bind(sim, rng)
        if self.crash_set is None:
            self.crash_set = frozenset(rng.sample(range(sim.n), sim.f))
        if len(self.crash_set) > sim.f:
            raise HarnessFault(f"crash set of {len(self.crash_set)} exceeds f={sim.f}")

    def initial_corruptions(self):
        return sorted(self.crash_set)

    def hold(self, delivery, net) -> bool:
        return delivery.msg.sender in self.crash_set

    def board_step(self, ctx):
        stall = sorted(c for c in ctx.open if c in self.crash_set)
        if stall and ctx.partial_budget > 0:
            return "stall", stall[0]
        return "write", self.rng.choice(sorted(ctx.open))


def crash_adversary(crash_set: Optional[Iterable[int]] = None) -> CrashAdversary:
    return CrashAdversary(crash_set)


# -- steering adversaries ----------------------------------------------------

class SteeringAdversary(Adversary):
    """Plans every ``n - f`` set and writes corrupt coins last to keep the coin ambiguous.

    Line plans aim for an all-BOT third line (so nobody keeps ``v*``), and the
    corrupt columns of each coin board are chosen, after the good columns are
    known, so that a split of the players' coin outputs can be produced by
    erasing at most ``f`` last-write cells.
    """

    name = "steering"

    def __init__(self, stall_good: bool = False):
        self.stall_good = stall_good
        self.plans: dict = {}
        self.col_plan: dict = {}  # board -> {col: list of cells}
        self.erase_plan: dict = {}  # board -> {pid: cols}
        self.board_state: dict = {}
        self.steer_stats = {"split_planned": 0, "split_infeasible": 0, "mimic": 0, "mirror": 0}

    def bind(self, sim, rng) -> None:
        super().bind(sim, rng)
        self.n, self.f, self.q = sim.n, sim.f, sim.q

    def initial_corruptions(self):
        return sorted(self.rng.sample(range(self.n), self.f))

    # -- delivery gating -----------------------------------------------

    def _gated(self, msg) -> bool:
        if self.sim.net.transport == "direct":
            return msg.kind is Kind.ACCEPT
        return msg.kind is Kind.READY

    def _allowed(self, delivery) -> bool:
        msg = delivery.msg
        if not self._gated(msg):
            return True
        key = msg.tag
        pl = self.sim.players[delivery.recipient]
        if pl.halted or key in pl.sets:
            return True
        plan = self.plans.get(key)
        if plan is None:
            return False
        chosen = plan.get(delivery.recipient)
        return chosen is not None and msg.origin in chosen

    def hold(self, delivery, net) -> bool:
        return not self._allowed(delivery)

    def release(self, held, forced: bool) -> list:
        if forced:
            return list(held)
        out = [d for d in held if self._allowed(d)]
        if out:
            return out
        keys = sorted({d.msg.tag for d in held if self._gated(d.msg) and d.msg.tag not in self.plans})
        for key in keys:
            senders = self.sim.sent.get(key, {})
            if len(senders) >= self.q:
                self.plans[key] = self.make_plan(key, dict(senders))
        return [d for d in held if self._allowed(d)]

    # -- line plans ----------------------------------------------------

    def _pools(self, senders: dict) -> dict:
        pools = {}
        for s in sorted(senders):
            pools.setdefault(senders[s], []).append(s)
        for v in pools:
            self.rng.shuffle(pools[v])
        return pools

    def _take(self, pools: dict, want: dict) -> Optional[frozenset]:
        chosen = []
        for v, k in want.items():
            pool = pools.get(v, [])
            if k > len(pool):
                return None
            chosen.extend(pool[:k])
        return frozenset(chosen)

    def _fill(self, pools: dict, first: list) -> frozenset:
        """Take senders by value priority until ``q`` are chosen."""
        chosen = []
        for v in first:
            for s in pools.get(v, []):
                if len(chosen) < self.q:
                    chosen.append(s)
        return frozenset(chosen)

    def _sign_subset(self, pools: dict, sign: int) -> Optional[frozenset]:
        """A ``q``-set whose sum has the given sign, or None."""
        a, b = len(pools.get(1, [])), len(pools.get(-1, []))
        ks = range(max(0, self.q - b), min(a, self.q) + 1)
        for k in (ks if sign < 0 else reversed(ks)):
            if sgn(2 * k - self.q) == sign:
                return self._take(pools, {1: k, -1: self.q - k})
        return None

    def _major_subset(self, pools: dict, value: Optional[int]) -> Optional[frozenset]:
        """A ``q``-set in which ``value`` holds more than n/2 (or, for BOT, nothing does)."""
        a, b = len(pools.get(1, [])), len(pools.get(-1, []))
        half = self.n / 2
        for k in range(max(0, self.q - b), min(a, self.q) + 1):
            j = self.q - k
            if value is None and k <= half and j <= half:
                return self._take(pools, {1: k, -1: j})
            if value == 1 and k > half:
                return self._take(pools, {1: k, -1: j})
            if value == -1 and j > half:
                return self._take(pools, {1: k, -1: j})
        return None

    def make_plan(self, key, senders: dict) -> dict:
        t, phase = key
        pools = self._pools(senders)
        if phase == L1:
            return self.plan_line1(t, pools)
        if phase == L2:
            return self.plan_line2(t, pools)
        if phase == L3:
            return self.plan_line3(t, pools)
        return self.plan_stage1(t, pools)

    def line1_targets(self, t: int) -> int:
        """How many recipients should come out of the first line with the majority sign."""
        return self.n // 2 + 1

    def plan_line1(self, t: int, pools: dict) -> dict:
        options = {s: self._sign_subset(pools, s) for s in (1, -1)}
        feasible = [s for s in (1, -1) if options[s] is not None]
        order = list(range(self.n))
        self.rng.shuffle(order)
        if len(feasible) == 1:
            return {r: options[feasible[0]] for r in order}
        major = self.rng.choice((1, -1))
        k = self.line1_targets(t)
        return {r: options[major] if i < k else options[-major] for i, r in enumerate(order)}

    def line2_majority(self, t: int) -> set:
        """Recipients that should see a strict majority on the second line."""
        return set()

    def plan_line2(self, t: int, pools: dict) -> dict:
        plus, minus = len(pools.get(1, [])), len(pools.get(-1, []))
        major = 1 if plus >= minus else -1
        want = self.line2_majority(t)
        plan = {}
        for r in range(self.n):
            pick = None
            if r in want:
                pick = self._major_subset(pools, major)
            if pick is None:
                pick = self._major_subset(pools, None)
            if pick is None:
                pick = self._fill(pools, [-major, major])
            plan[r] = pick
        return plan

    def line3_target(self, t: int, r: int) -> Optional[int]:
        """Desired count of non-BOT messages in ``r``'s set; None defers the plan."""
        return 0

    def plan_line3(self, t: int, pools: dict) -> dict:
        bots = pools.get(None, [])
        carriers = [s for v, ss in pools.items() if v is not None for s in ss]
        plan = {}
        for r in range(self.n):
            want = self.line3_target(t, r)
            if want is None:
                plan[r] = None
                continue
            want = max(want, self.q - len(bots))
            want = min(want, len(carriers))
            plan[r] = frozenset(carriers[:want] + bots[:self.q - want])
        return plan

    def plan_stage1(self, t: int, pools: dict) -> dict:
        pick = self._fill(pools, [None, 1, -1])
        return {r: pick for r in range(self.n)}

    # -- coin boards ---------------------------------------------------

    def board_step(self, ctx):
        board = ctx.board
        sim = self.sim
        opened = sorted(ctx.open)
        if board.index % 2:
            carriers = [c for c in opened if sim.players[c].val.get((board.index + 1) // 2, 0) != 0]
            if carriers and ctx.partial_budget > 0:
                return "stall", carriers[0]
            return "write", self.rng.choice(opened)
        st = self.board_state.get(board.index)
        if st is None:
            good = [c for c in opened if c not in sim.corrupt]
            candidates = []
            if self.stall_good:
                pool = list(good)
                self.rng.shuffle(pool)
                candidates = pool[:max(0, ctx.partial_budget)]
            st = self.board_state[board.index] = {"cand": set(candidates)}
        good_open = [c for c in opened if c not in sim.corrupt]
        plain = [c for c in good_open if c not in st["cand"]]
        if plain:
            return "write", self.rng.choice(plain)
        if good_open:
            if ctx.partial_budget > 0 and self._calm(ctx):
                return "stall", good_open[0]
            return "write", good_open[0]
        return "write", opened[0]

    def _bad_capacity(self, cols) -> float:
        w = self.sim.weights
        return sum(w[b] * min(self.sim.params.xmax, self.sim.params.m) for b in cols)

    def _drift(self, board) -> float:
        """Current ``bias + Sigma_G`` in truth for the iteration of ``board``."""
        sim = self.sim
        t = board.index // 2
        xmax = sim.params.xmax
        bias = sim.history.boards[board.index - 2].total()
        w = sim.weights
        return bias + sum(w[c] * clamp(board.column_sum(c), xmax)
                          for c in range(self.n) if c not in sim.corrupt)

    def _calm(self, ctx) -> bool:
        bad = [c for c in ctx.board.writers if c in self.sim.corrupt]
        return abs(self._drift(ctx.board)) <= self._bad_capacity(bad) - 1

    def cell_value(self, ctx, col: int) -> int:
        board = ctx.board
        plan = self.col_plan.get(board.index)
        if plan is None:
            plan = self.col_plan[board.index] = self._plan_bad_columns(ctx)
        cells = plan[col]
        return cells[board.written(col)]

    def _sigma_direction(self, t: int) -> int:
        sim = self.sim
        keep = [pl for pl in sim.players if 1 <= pl.x.get(t, 0) <= sim.f]
        return -keep[0].vstar[t] if keep else 0

    def _erasable(self, board, extra: dict) -> list[tuple[int, float]]:
        """(column, delta) for every column whose last write lies in the current window.

        ``extra`` maps a corrupt column to its planned (sum, last cell).
        """
        sim = self.sim
        xmax = sim.params.xmax
        w = sim.weights
        odd = sim.history.boards[board.index - 2]
        out = []
        for c in range(self.n):
            if c in extra:
                x, last = extra[c]
                out.append((c, w[c] * (clamp(x, xmax) - clamp(x - last, xmax))))
            elif board.written(c):
                x = board.column_sum(c)
                last = board.columns[c][-1]
                out.append((c, w[c] * (clamp(x, xmax) - clamp(x - last, xmax))))
            elif odd.written(c):
                out.append((c, float(odd.columns[c][-1])))
        return out

    def _reach(self, total: float, deltas: list[float]) -> bool:
        """Can erasing at most f of these cells flip the sign of ``total``?"""
        f = self.f
        if total >= 0:
            pos = sorted((d for d in deltas if d > 0), reverse=True)[:f]
            return sum(pos) > total
        neg = sorted((-d for d in deltas if d < 0), reverse=True)[:f]
        return sum(neg) >= -total

    def _plan_bad_columns(self, ctx) -> dict:
        sim = self.sim
        board = ctx.board
        m, xmax = sim.params.m, sim.params.xmax
        w = sim.weights
        bad = sorted(c for c in ctx.open if c in sim.corrupt)
        drift = self._drift(board)
        base = [d for c, d in self._erasable(board, {}) if c not in bad]
        # distinct clamped values, each with the smallest raw sum producing it
        choices = {}
        for x in range(-m, m + 1, 2):
            cx = clamp(x, xmax)
            if cx not in choices or abs(x) < abs(choices[cx]):
                choices[cx] = x
        raw = sorted(choices.values())
        t = board.index // 2
        sigma = self._sigma_direction(t)
        good_sum = drift - sim.history.boards[board.index - 2].total()
        best = None
        if sigma != 0 and good_sum != 0 and sgn(good_sum) == sigma:
            self.steer_stats["mimic"] += 1
            share = good_sum / max(1, sum(w[b] for b in bad))
            target = max(-xmax, min(xmax, int(round(share))))
            xs = tuple(min(raw, key=lambda x: abs(clamp(x, xmax) - target)) for _ in bad)
            best = (0, xs, tuple(1 if x > -m else -1 for x in xs))
        else:
            self.steer_stats["mirror"] += 1
            best = self._search_mirror(drift, bad, raw, base)
        _, xs, lasts = best
        plan = {}
        for b, x, lv in zip(bad, xs, lasts):
            plus = (m + x) // 2
            cells = [1] * plus + [-1] * (m - plus)
            if cells[-1] != lv:
                cells.reverse()
            plan[b] = cells
        return plan

    def _search_mirror(self, drift: float, bad: list, raw: list, base: list):
        """Pick corrupt column sums so erasing at most f cells can split the outputs.

        Among splittable choices the least conspicuous (smallest total |sum|)
        wins; when none is splittable, the total closest to zero.
        """
        m, xmax, f = self.sim.params.m, self.sim.params.xmax, self.f
        w = np.array([self.sim.weights[b] for b in bad])
        grid = np.array(np.meshgrid(*[raw] * len(bad), indexing="ij")).reshape(len(bad), -1).T
        cx = np.clip(grid, -xmax, xmax)
        total = drift + cx @ w
        up = total >= 0
        last = np.where(up[:, None], np.where(grid > -m, 1, -1), np.where(grid < m, -1, 1))
        bad_delta = w * (cx - np.clip(grid - last, -xmax, xmax))
        deltas = np.hstack([np.tile(np.asarray(base, dtype=float), (len(grid), 1)), bad_delta])
        top_pos = -np.sort(-np.where(deltas > 0, deltas, 0.0), axis=1)[:, :f].sum(axis=1)
        top_neg = -np.sort(np.where(deltas < 0, deltas, 0.0), axis=1)[:, :f].sum(axis=1)
        ok = np.where(up, top_pos > total, top_neg >= -total)
        size = np.abs(grid).sum(axis=1)
        key2 = np.where(ok, size, np.abs(total))
        order = np.lexsort((np.abs(total), key2, ~ok))
        i = int(order[0])
        if ok[i]:
            self.steer_stats["split_planned"] += 1
        else:
            self.steer_stats["split_infeasible"] += 1
        return (None, tuple(int(x) for x in grid[i]), tuple(int(v) for v in last[i]))

    def erasures(self, p: int, board: int, history, info) -> Iterable[int]:
        if board % 2:
            return ()
        plan = self.erase_plan.get(board)
        if plan is None:
            plan = self.erase_plan[board] = self._plan_erasures(history.boards[board - 1])
        return plan.get(p, ())

    def _next_values(self, t: int) -> dict:
        """Known next-iteration values: keepers and deciders hold v*; None means coin."""
        out = {}
        for pl in self.sim.players:
            x = pl.x.get(t)
            out[pl.pid] = pl.vstar[t] if x else None
        return out

    def _plan_erasures(self, board) -> dict:
        sim = self.sim
        t = board.index // 2
        xmax = sim.params.xmax
        w = sim.weights
        odd = sim.history.boards[board.index - 2]
        total = odd.total() + sum(w[c] * clamp(board.column_sum(c), xmax) for c in range(self.n))
        cells = self._erasable(board, {})
        if total >= 0:
            useful = sorted((cd for cd in cells if cd[1] > 0), key=lambda cd: -cd[1])[:self.f]
        else:
            useful = sorted((cd for cd in cells if cd[1] < 0), key=lambda cd: cd[1])[:self.f]
        subsets = []
        for k in range(len(useful) + 1):
            for combo in itertools.combinations(useful, k):
                subsets.append((tuple(c for c, _ in combo), sgn(total - sum(d for _, d in combo))))
        reachable = {s for _, s in subsets}
        if len(reachable) < 2:
            return {}
        known = self._next_values(t)
        plus = sum(1 for v in known.values() if v == 1)
        minus = sum(1 for v in known.values() if v == -1)
        flippers = [p for p, v in known.items() if v is None]
        self.rng.shuffle(flippers)
        plan = {}
        for p in flippers:
            want = 1 if plus <= minus else -1
            if want == 1:
                plus += 1
            else:
                minus += 1
            plan[p] = min((cols for cols, s in subsets if s == want), key=len)
        return plan


class MirrorMimicAdversary(SteeringAdversary):
    """Corrupt coins cancel the good sum (mirror) or copy it (mimic) to stall the coin."""

    name = "mirror-mimic"


def mirror_mimic_adversary(stall_good: bool = False) -> MirrorMimicAdversary:
    return MirrorMimicAdversary(stall_good)


class SigmaSchedulingAdversary(SteeringAdversary):
    """Late choice between an empty and a one-player keep set, keyed on two targets' coins.

    One slow player ``p0`` is the only one shown a second-line majority. Its
    third-line set is chosen after the coin boards of the iteration, so it
    keeps ``v*`` exactly when both targets' column sums point against ``v*``.
    """

    name = "sigma-scheduling"

    def __init__(self, targets: Optional[Iterable[int]] = None, slow: Optional[int] = None,
                 stall_good: bool = False):
        super().__init__(stall_good)
        self.targets = None if targets is None else tuple(targets)
        self.slow = slow
        self.choices: dict = {}

    def bind(self, sim, rng) -> None:
        super().bind(sim, rng)
        players = list(range(self.n))
        if self.targets is None:
            self.targets = tuple(sorted(rng.sample(players, 2)))
        if len(self.targets) != 2:
            raise HarnessFault("sigma scheduling needs exactly two targets")
        rest = [p for p in players if p not in self.targets]
        if self.slow is None:
            self.slow = rng.choice(rest)
        others = [p for p in rest if p != self.slow]
        self._corrupt = sorted(rng.sample(others, self.f))

    def initial_corruptions(self):
        return self._corrupt

    def line2_majority(self, t: int) -> set:
        return {self.slow}

    def line3_target(self, t: int, r: int) -> Optional[int]:
        return None if r == self.slow else 0

    def plan_line3(self, t: int, pools: dict) -> dict:
        slow_v = self.sim.sent.get((t, L3), {}).get(self.slow)
        if slow_v is not None:
            pools = {v: [s for s in ss if s != self.slow] for v, ss in pools.items()}
        return super().plan_line3(t, pools)

    def on_boards(self, t: int) -> None:
        key = (t, L3)
        plan = self.plans.get(key)
        if plan is None or plan.get(self.slow) is not None:
            return
        senders = self.sim.sent.get(key, {})
        vstar = senders.get(self.slow)
        bots = sorted(s for s, v in senders.items() if v is None and s != self.slow)
        xs = self.sim.records[t].X
        keep = (vstar is not None and len(bots) >= self.q - 1
                and sgn(xs[self.targets[0]]) == -vstar and sgn(xs[self.targets[1]]) == -vstar)
        if keep:
            plan[self.slow] = frozenset([self.slow] + bots[:self.q - 1])
        else:
            pick = [s for s, v in senders.items() if v is None]
            plan[self.slow] = frozenset(sorted(pick)[:self.q]) if len(pick) >= self.q \
                else frozenset(sorted(senders)[:self.q])
        self.choices[t] = keep


def sigma_scheduling_adversary(targets: Optional[Iterable[int]] = None,
                               stall_good: bool = False) -> SigmaSchedulingAdversary:
    return SigmaSchedulingAdversary(targets, stall_good=stall_good)


class ForcedKeepAdversary(SteeringAdversary):
    """Scripted scenario: everybody keeps ``v*`` with one carrier in its third-line set,
    while corrupt players write against ``v*`` and stall ``v*`` columns where they can."""

    name = "forced-keep"

    def line2_majority(self, t: int) -> set:
        return set(range(min(self.f, self.n)))

    def line3_target(self, t: int, r: int) -> Optional[int]:
        return 1

    def plan_stage1(self, t: int, pools: dict) -> dict:
        return {r: self._fill(pools, [None, 1, -1]) for r in range(self.n)}

    def _plan_bad_columns(self, ctx) -> dict:
        sim = self.sim
        t = ctx.board.index // 2
        vstar = next((pl.vstar[t] for pl in sim.players if pl.vstar.get(t) is not None), None)
        against = -vstar if vstar is not None else -1
        m = sim.params.m
        return {c: [against] * m for c in ctx.open if c in sim.corrupt}

    def _plan_erasures(self, board) -> dict:
        sim = self.sim
        t = board.index // 2
        vstar = next((pl.vstar[t] for pl in sim.players if pl.vstar.get(t) is not None), None)
        if vstar is None:
            return {}
        cells = [(c, d) for c, d in self._erasable(board, {}) if d * vstar > 0]
        cells.sort(key=lambda cd: -abs(cd[1]))
        cols = tuple(c for c, _ in cells[:self.f])
        return {p: cols for p in range(self.n)}


ADVERSARIES = {
    "fair": fair_adversary,
    "crash": crash_adversary,
    "mirror-mimic": mirror_mimic_adversary,
    "sigma-scheduling": sigma_scheduling_adversary,
    "forced-keep": ForcedKeepAdversary,
}


def make_adversary(name: str, **params) -> Adversary:
    try:
        factory = ADVERSARIES[name]
    except KeyError:
        raise ValueError(f"unknown adversary {name!r}; choose from {sorted(ADVERSARIES)}") from None
    return factory(**params)
