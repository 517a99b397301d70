"""Iterated agreement with a weighted global coin, epochs and restarts.

The :class:`Simulation` owns every player state machine, the message layer and
the blackboard history. It runs a single deterministic event loop:

1. deliver a pending message chosen by the adversary;
2. at quiescence, let the adversary release held messages;
3. otherwise build the next pair of coin boards once ``n - f`` players wait;
4. otherwise force-release every held message (eventual delivery);
5. otherwise the run is stuck, which is a harness fault.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import islice
from typing import Iterable, Optional, Sequence

import numpy as np

from . import fraud
from .blackboard import BlackboardHistory
from .coinflip import (CoinEntry, bias_board, clamp, coin_board, coin_output,
                       stage1_value, validate_coin_claim)
from .core import (HarnessFault, InvariantViolation, ProtocolParams, SafetyViolation,
                   Value, sgn)
from .netsim import Kind, Message, Network, Validator

L1, L2, L3, COIN = "L1", "L2", "L3", "C"
BOARD, HALTED = "BOARD", "HALTED"
PHASE_NAMES = {L1: "Line1", L2: "Line2", L3: "Line3", COIN: "CoinFlip", BOARD: "CoinFlip",
               HALTED: "Halted"}
_NEXT = {L1: L2, L2: L3}


# -- the three lines ---------------------------------------------------------

def line1_step(values: Iterable[int]) -> int:
    """Sign of the sum of the validated first-line values."""
    return sgn(sum(values))


def line2_step(values: Iterable[int], n: int) -> Value:
    """The value held by more than ``n / 2`` of the messages, else BOT."""
    vals = list(values)
    winners = [v for v in (1, -1) if vals.count(v) > n / 2]
    if len(winners) > 1:
        raise InvariantViolation("two values both exceed n/2")
    return winners[0] if winners else None


def line3_step(values: Iterable[Value], f: int) -> tuple[int, Value, str]:
    """Returns ``(x, v*, action)``; action is ``decide``, ``keep`` or ``flip``."""
    seen = [v for v in values if v is not None]
    if len(set(seen)) > 1:
        raise InvariantViolation(f"third-line set carries conflicting values {sorted(set(seen))}")
    x = len(seen)
    if x == 0:
        return 0, None, "flip"
    return x, seen[0], ("decide" if x >= f + 1 else "keep")


def _split_exists(a: int, b: int, size: int, ok) -> bool:
    """Is there a subset of ``size`` items, ``k`` from ``a`` and ``size - k`` from ``b``, with ``ok(k, size - k)``?"""
    for k in range(max(0, size - b), min(a, size) + 1):
        if ok(k, size - k):
            return True
    return False


# -- state -------------------------------------------------------------------

@dataclass
class Player:
    pid: int
    input: int
    value: Value
    t: int = 1
    phase: str = L1
    clock: float = 0.0
    decided: Value = None
    decided_iter: Optional[int] = None
    decided_time: Optional[float] = None
    halted: bool = False
    valid: dict = field(default_factory=dict)  # (t, phase) -> {sender: value} in validation order
    sets: dict = field(default_factory=dict)  # (t, phase) -> chosen n-f set
    x: dict = field(default_factory=dict)
    vstar: dict = field(default_factory=dict)
    val: dict = field(default_factory=dict)

    @property
    def phase_name(self) -> str:
        if self.halted:
            return "Halted"
        if self.decided is not None:
            return "Decided"
        return PHASE_NAMES[self.phase]


@dataclass
class IterationRecord:
    t: int
    epoch: int
    restart: int
    entries: dict = field(default_factory=dict)  # pid -> CoinEntry
    x: dict = field(default_factory=dict)
    vstar: Value = None
    carriers_at_board: int = 0
    bias_bar: int = 0
    X: tuple = ()
    sigma_good: float = 0.0
    sigma_bad: float = 0.0
    sigma_dir: int = 0
    escaped: bool = False
    escape_sign: int = 0
    closed: bool = False

    def classes(self, f: int) -> tuple[set, set, set]:
        keep = {p for p, x in self.x.items() if 1 <= x <= f}
        flip = {p for p, x in self.x.items() if x == 0}
        dec = {p for p, x in self.x.items() if x >= f + 1}
        return keep, flip, dec


@dataclass(frozen=True)
class EpochReport:
    restart: int
    epoch: int
    first_iteration: int
    last_iteration: int
    rows: int
    time_start: float
    time_end: float
    weights_before: tuple
    weights_after: tuple
    deductions_good: float
    deductions_bad: float
    invariant1_margin: float
    epoch_margin: float
    zero_weight_good: int
    zero_weight_bad: int
    max_good_excess: float
    bad_incident_capacity: float
    good_pairs: int
    good_pairs_over: int
    corruption_free: bool
    progress_flagged: int
    progress_failed: int
    max_local_spread: float
    local_zero_breaks: int
    matching_problems: int
    sigma_corr: tuple

    def csv_fields(self) -> dict:
        return {
            "restart": self.restart, "epoch": self.epoch,
            "deductionsGood": f"{self.deductions_good:.9g}",
            "deductionsBad": f"{self.deductions_bad:.9g}",
            "invariant1Margin": f"{self.invariant1_margin:.9g}",
            "zeroWeightGood": self.zero_weight_good, "zeroWeightBad": self.zero_weight_bad,
            "maxGoodExcess": f"{self.max_good_excess:.9g}",
            "badIncidentCapacity": f"{self.bad_incident_capacity:.9g}",
        }


@dataclass(frozen=True)
class RunReport:
    seed: object
    params: ProtocolParams
    adversary: str
    transport: str
    inputs: tuple
    decided_value: Value
    decided: bool
    epochs_used: int
    iterations_used: int
    restarts: int
    latency_time: float
    latency_rows: int
    invariant1_margins: tuple
    agreement_ok: bool
    validity_ok: bool
    weight_trajectory: tuple
    corrupt: tuple
    epochs: tuple
    stats: dict
    deliveries: int

    @property
    def min_invariant1_margin(self) -> float:
        return min(self.invariant1_margins)

    @property
    def final_weights(self) -> tuple:
        return self.weight_trajectory[-1]

    def zero_weight(self, bad: bool) -> int:
        w = self.final_weights
        return sum(1 for i in range(len(w)) if w[i] == 0.0 and ((i in self.corrupt) == bad))


# -- simulation --------------------------------------------------------------

class Simulation:
    """One seeded protocol execution against one adversary."""

    def __init__(self, params: ProtocolParams, adversary, seed=0, inputs: Optional[Sequence[int]] = None,
                 transport: str = "direct", max_restarts: int = 3, stop_when_decided: bool = True,
                 max_iterations: Optional[int] = None, check: bool = True, trace: Optional[list] = None,
                 keep_records: bool = False, max_steps: int = 50_000_000):
        self.params = params
        n, f = params.n, params.f
        self.n, self.f = n, f
        self.q = n - f
        self.seed = seed
        self.coin_rng = random.Random(f"{seed}/coins")
        input_rng = random.Random(f"{seed}/inputs")
        if inputs is None:
            inputs = [input_rng.choice((-1, 1)) for _ in range(n)]
        inputs = list(inputs)
        if len(inputs) != n or any(v not in (-1, 1) for v in inputs):
            raise ValueError(f"inputs must be {n} values in {{-1, +1}}")
        self.inputs = tuple(inputs)
        self.players = [Player(p, v, v) for p, v in enumerate(inputs)]
        self.max_restarts = max_restarts
        self.stop_when_decided = stop_when_decided
        self.max_iterations = max_iterations
        self.check = check
        self.keep_records = keep_records
        self.max_steps = max_steps

        self.adversary = adversary
        self.net = Network(n, f, transport, scheduler=adversary, on_accept=self._on_accept, trace=trace)
        self.validator = Validator(n, kind_of=lambda m: m.tag[1], on_valid=self._on_valid)
        for kind, rule in ((L1, self._valid_l1), (L2, self._valid_l2), (L3, self._valid_l3),
                           (COIN, self._valid_coin)):
            self.validator.register(kind, rule)
        self.history = BlackboardHistory(n, f)

        self._started = False
        self.corrupt: set = set()
        self.corruption_log: list = []  # (iteration, pid)
        self.sent: dict = {}  # (t, phase) -> {sender: value}
        self.accept_values: dict = {}  # bid -> value first accepted
        self.entries: dict = {}  # (pid, t) -> CoinEntry
        self.records: dict = {}
        self.built = 0  # last iteration whose boards exist
        self.weights = [1.0] * n
        self.epoch = 1
        self.epoch_start = 1
        self.restart = 0
        self.exhausted = False
        self.acc = fraud.CorrelationAccumulator(n)
        self.sigma_corr = [0] * n
        self.epoch_reports: list = []
        self.epoch_data: list = []
        self.margins = [fraud.check_invariant1(self.weights, range(n), (), params.epsilon, f)]
        self.trajectory = [tuple(self.weights)]
        self.epoch_time_start = 0.0
        self.epoch_rows_start = 0
        self.decisions: dict = {}  # pid -> (value, iteration) for players good when deciding
        self.last_decision_time = 0.0
        self.last_decision_rows = 0
        self.stats = {"iterations": 0, "escapes": 0, "escapes_uncovered": 0, "forced_keep": 0,
                      "forced_keep_unanimous": 0, "keep_nonempty": 0, "max_bias_gap": 0,
                      "forced_releases": 0, "steps": 0, "local_zero_breaks": 0,
                      "max_local_spread": 0.0}
        adversary.bind(self, random.Random(f"{seed}/adversary"))
        for p in adversary.initial_corruptions():
            self.corrupt_player(p)

    # -- corruption ------------------------------------------------------

    @property
    def good(self) -> list[int]:
        return [p for p in range(self.n) if p not in self.corrupt]

    def corrupt_player(self, p: int) -> None:
        if p in self.corrupt:
            return
        if not 0 <= p < self.n:
            raise HarnessFault(f"cannot corrupt unknown player {p}")
        if len(self.corrupt) >= self.f:
            raise HarnessFault(f"corruption budget f={self.f} exhausted")
        self.corrupt.add(p)
        self.corruption_log.append((self.built + 1 if self._started else 0, p))

    # -- messaging -------------------------------------------------------

    def _broadcast(self, p: Player, phase: str, value: Value) -> None:
        key = (p.t, phase)
        self.sent.setdefault(key, {})[p.pid] = value
        self.net.rbc_broadcast(p.pid, key, value, p.clock)

    def _on_accept(self, r: int, bid, value, time: float) -> None:
        first = self.accept_values.setdefault(bid, value)
        if first != value:
            raise SafetyViolation(f"reliable broadcast {bid} accepted with two values")
        pl = self.players[r]
        if pl.halted:
            return
        if time > pl.clock:
            pl.clock = time
        self.validator.submit(r, Message(bid[0], Kind.ACCEPT, bid, value, time))

    def _on_valid(self, r: int, msg: Message) -> None:
        pl = self.players[r]
        key = msg.tag
        got = pl.valid.setdefault(key, {})
        got[msg.origin] = msg.value
        if key == (pl.t, pl.phase) and len(got) >= self.q:
            self._advance(pl)

    # -- validation predicates -------------------------------------------

    def _counts(self, r: int, key) -> tuple[int, int, int]:
        got = self.players[r].valid.get(key, {})
        plus = minus = bot = 0
        for v in got.values():
            if v is None:
                bot += 1
            elif v > 0:
                plus += 1
            else:
                minus += 1
        return plus, minus, bot

    def _valid_l1(self, r: int, msg: Message) -> bool:
        t = msg.tag[0]
        v = msg.value
        if v not in (-1, 1):
            return False
        if t == 1:
            return True
        plus, minus, bot = self._counts(r, (t - 1, L3))
        carried = plus if v > 0 else minus
        if carried >= 1 and carried + bot >= self.q:
            return True
        if bot >= self.q:
            entry = self.entries.get((r, t - 1))
            return entry is not None and validate_coin_claim(entry.total, v, self.f)
        return False

    def _valid_l2(self, r: int, msg: Message) -> bool:
        v = msg.value
        plus, minus, _ = self._counts(r, (msg.tag[0], L1))
        if v == 1:
            return _split_exists(plus, minus, self.q, lambda a, b: a - b >= 0)
        if v == -1:
            return _split_exists(plus, minus, self.q, lambda a, b: a - b < 0)
        return False

    def _valid_l3(self, r: int, msg: Message) -> bool:
        v = msg.value
        plus, minus, _ = self._counts(r, (msg.tag[0], L2))
        half = self.n / 2
        if v is None:
            return _split_exists(plus, minus, self.q, lambda a, b: a <= half and b <= half)
        if v == 1:
            return _split_exists(plus, minus, self.q, lambda a, b: a > half)
        if v == -1:
            return _split_exists(plus, minus, self.q, lambda a, b: b > half)
        return False

    def _valid_coin(self, r: int, msg: Message) -> bool:
        v = msg.value
        plus, minus, bot = self._counts(r, (msg.tag[0], L3))
        if v is None:
            return bot >= self.q
        carried = plus if v == 1 else minus if v == -1 else 0
        return carried >= 1 and carried + bot >= self.q

    # -- player transitions ----------------------------------------------

    def _advance(self, pl: Player) -> None:
        while not pl.halted:
            if pl.phase == BOARD:
                if pl.t <= self.built:
                    self._finish_iteration(pl)
                    continue
                return
            key = (pl.t, pl.phase)
            got = pl.valid.get(key)
            if got is None or len(got) < self.q:
                return
            chosen = dict(islice(got.items(), self.q))
            pl.sets[key] = chosen
            vals = list(chosen.values())
            if pl.phase == L1:
                out = line1_step(vals)
                pl.phase = L2
                self._broadcast(pl, L2, out)
            elif pl.phase == L2:
                out = line2_step(vals, self.n)
                pl.phase = L3
                self._broadcast(pl, L3, out)
            elif pl.phase == L3:
                x, vstar, action = line3_step(vals, self.f)
                pl.x[pl.t] = x
                pl.vstar[pl.t] = vstar
                if x >= 1:
                    pl.value = vstar
                if action == "decide":
                    self._decide(pl, vstar)
                pl.phase = COIN
                self._broadcast(pl, COIN, vstar if x >= 1 else None)
            elif pl.phase == COIN:
                pl.val[pl.t] = stage1_value(vals)
                pl.phase = BOARD
            else:  # pragma: no cover
                raise HarnessFault(f"unknown phase {pl.phase}")

    def _decide(self, pl: Player, v: int) -> None:
        if pl.decided is not None:
            if pl.decided != v:
                raise SafetyViolation(f"player {pl.pid} changed its decision {pl.decided} -> {v}")
            return
        pl.decided = v
        pl.decided_iter = pl.t
        pl.decided_time = pl.clock
        if pl.pid in self.corrupt:
            return
        for q, (w, it) in self.decisions.items():
            if w != v:
                raise SafetyViolation(
                    f"agreement: player {pl.pid} decided {v} in iteration {pl.t}, "
                    f"player {q} decided {w} in iteration {it}")
        good_inputs = {self.inputs[p] for p in self.good}
        if len(good_inputs) == 1 and v not in good_inputs:
            raise SafetyViolation(f"validity: good inputs all {good_inputs.pop()}, player {pl.pid} decided {v}")
        self.decisions[pl.pid] = (v, pl.t)
        self.last_decision_time = max(self.last_decision_time, pl.clock)
        self.last_decision_rows = self.history.rows_charged

    def _finish_iteration(self, pl: Player) -> None:
        t = pl.t
        if pl.x[t] == 0:
            pl.value = self.entries[(pl.pid, t)].output
        if self.stop_when_decided and pl.decided_iter is not None and t >= pl.decided_iter + 1:
            pl.halted = True
            pl.phase = HALTED
            return
        pl.t = t + 1
        pl.phase = L1
        if self.max_iterations is not None and pl.t > self.max_iterations:
            pl.halted = True
            pl.phase = HALTED
            return
        self._broadcast(pl, L1, pl.value)

    # -- boards ----------------------------------------------------------

    def waiting(self, t: int) -> list[int]:
        return [p.pid for p in self.players if p.phase == BOARD and p.t == t and not p.halted]

    def _build_boards(self) -> bool:
        t = self.built + 1
        waiting = self.waiting(t)
        if len(waiting) < self.q:
            return False
        adv = self.adversary
        for p in adv.corruptions(t):
            self.corrupt_player(p)
        par = self.params
        hist = self.history
        rec = IterationRecord(t, self.epoch, self.restart)
        rec.carriers_at_board = sum(1 for p in self.players if p.x.get(t, 0) >= 1)
        start = max(self.players[p].clock for p in waiting)
        odd_writers = {p: (lambda ctx, col: self.players[col].val[t]) for p in waiting}
        odd = hist.run_board(bias_board(t), par.m0, odd_writers, adv, start, info=self)
        for p in range(self.n):
            hist.finalize_view(p, bias_board(t), adv, info=self)
        first_good = min(self.good) if self.good else 0
        rec.bias_bar = hist.views[(first_good, bias_board(t))].board_sum(bias_board(t))

        def good_coin(ctx, col):
            return self.coin_rng.choice((-1, 1))

        def bad_coin(ctx, col):
            v = adv.cell_value(ctx, col)
            if v not in (-1, 1):
                raise HarnessFault(f"corrupt coin value {v!r} not in {{-1, +1}}")
            return v

        even_writers = {p: (bad_coin if p in self.corrupt else good_coin) for p in waiting}
        even = hist.run_board(coin_board(t), par.m, even_writers, adv, odd.end_time, info=self)
        for p in range(self.n):
            hist.finalize_view(p, coin_board(t), adv, info=self)
        if self.check:
            problems = hist.check_contract(bias_board(t)) + hist.check_contract(coin_board(t))
            if problems:
                raise InvariantViolation(f"blackboard contract, iteration {t}: {problems}")

        for pl in self.players:
            if not pl.halted:
                view = hist.views[(pl.pid, coin_board(t))]
                entry = coin_output(pl.pid, view, t, self.weights, par.xmax)
                self.entries[(pl.pid, t)] = entry
                rec.entries[pl.pid] = entry
        xs = tuple(clamp(even.column_sum(i), par.xmax) for i in range(self.n))
        rec.X = xs
        rec.sigma_good = sum(self.weights[i] * xs[i] for i in self.good)
        rec.sigma_bad = sum(self.weights[i] * xs[i] for i in self.corrupt)
        self.acc.add(xs)
        self.records[t] = rec
        self.built = t
        self.stats["iterations"] += 1
        for p in waiting:
            pl = self.players[p]
            pl.clock = max(pl.clock, even.end_time)

        if t - self.epoch_start + 1 == par.T:
            self._end_epoch(t)
        adv.on_boards(t)
        for r in range(self.n):
            self.validator.recheck(r)
        for p in waiting:
            self._advance(self.players[p])
        self._close_iterations()
        return True

    # -- epochs ----------------------------------------------------------

    def _end_epoch(self, t: int) -> None:
        par = self.params
        n = self.n
        hist = self.history
        its = range(self.epoch_start, t + 1)
        w = np.asarray(self.weights)
        good, bad = self.good, sorted(self.corrupt)
        matchings = []
        local_counts = {}
        max_problems = 0
        flagged = failed = 0
        corruption_free = all(not (self.epoch_start <= it <= t) for it, _ in self.corruption_log)
        for p in range(n):
            view = hist.views[(p, coin_board(t))]
            counts = fraud.correlation_counts(view, its, par.xmax)
            local_counts[p] = counts
            corr = fraud.weighted(counts, self.weights)
            graph = fraud.build_excess_graph(corr, self.weights, par)
            match = fraud.rising_tide(graph)
            if self.check:
                probs = fraud.matching_problems(graph, match)
                max_problems += len(probs)
                if probs:
                    raise InvariantViolation(f"rising tide for player {p}: {probs}")
            matchings.append(match)
            if p in good and corruption_free:
                chk = fraud.blacklisting_progress(graph, match, bad, par.w_min)
                flagged += chk.flagged
                failed += not chk.ok
        local, consensus = fraud.weight_update(self.weights, matchings, par.w_min)
        true_corr = self.acc.matrix(self.weights)
        true_graph = fraud.build_excess_graph(true_corr, self.weights, par)
        if corruption_free:
            chk = fraud.blacklisting_progress(true_graph, fraud.rising_tide(true_graph), bad, par.w_min)
            flagged += chk.flagged
            failed += not chk.ok
        if self.check and (consensus > w + 1e-12).any():
            raise InvariantViolation("weights increased across an epoch")
        if failed and self.check:
            raise InvariantViolation(f"blacklisting progress failed in epoch {self.epoch}")
        spread = 0.0
        obs_breaks = 0
        for p in good:
            for i in range(n):
                if consensus[i] > 0:
                    spread = max(spread, abs(local[p, i] - local[i, i]))
                    if local[p, i] == 0.0:
                        obs_breaks += 1
        self.stats["max_local_spread"] = max(self.stats["max_local_spread"], spread)
        self.stats["local_zero_breaks"] += obs_breaks
        pairs = over = 0
        for a, i in enumerate(good):
            for j in good[a + 1:]:
                pairs += 1
                over += bool(-true_corr[i, j] > w[i] * w[j] * par.beta)
        margin = fraud.check_invariant1(consensus, good, bad, par.epsilon, self.f)
        k_next = self.epoch + 1
        rep = EpochReport(
            restart=self.restart, epoch=self.epoch, first_iteration=self.epoch_start, last_iteration=t,
            rows=hist.rows_charged - self.epoch_rows_start,
            time_start=self.epoch_time_start, time_end=hist.boards[-1].end_time,
            weights_before=tuple(self.weights), weights_after=tuple(float(x) for x in consensus),
            deductions_good=float(sum(w[i] - consensus[i] for i in good)),
            deductions_bad=float(sum(w[i] - consensus[i] for i in bad)),
            invariant1_margin=margin,
            epoch_margin=fraud.epoch_invariant_margin(consensus, good, bad, par, k_next),
            zero_weight_good=sum(1 for i in good if consensus[i] == 0.0),
            zero_weight_bad=sum(1 for i in bad if consensus[i] == 0.0),
            max_good_excess=fraud.max_good_excess(true_corr, self.weights, good, par.beta),
            bad_incident_capacity=fraud.bad_incident_capacity(true_graph, bad),
            good_pairs=pairs, good_pairs_over=over, corruption_free=corruption_free,
            progress_flagged=flagged, progress_failed=failed, max_local_spread=spread,
            local_zero_breaks=obs_breaks, matching_problems=max_problems,
            sigma_corr=tuple(self.sigma_corr),
        )
        self.epoch_reports.append(rep)
        if self.keep_records:
            self.epoch_data.append({"iterations": tuple(its), "weights": tuple(self.weights),
                                    "true": self.acc.counts.copy(), "local": local_counts})
        self.margins.append(margin)
        self.acc = fraud.CorrelationAccumulator(n)
        self.sigma_corr = [0] * n
        self.epoch_start = t + 1
        self.epoch_time_start = rep.time_end
        self.epoch_rows_start = hist.rows_charged
        self.trajectory.append(rep.weights_after)
        if self.epoch >= par.k_max + 1:
            self.restart += 1
            self.epoch = 1
            self.weights = [1.0] * n
            if self.restart > self.max_restarts:
                self.exhausted = True
        else:
            self.epoch += 1
            self.weights = [float(x) for x in consensus]

    # -- per-iteration checks --------------------------------------------

    def _close_iterations(self, final: bool = False) -> None:
        for t in sorted(self.records):
            rec = self.records[t]
            if rec.closed:
                continue
            pending = [pl for pl in self.players
                       if not pl.halted and t not in pl.x and pl.t <= t]
            if pending and not final:
                continue
            self._close(rec)

    def _close(self, rec: IterationRecord) -> None:
        rec.closed = True
        f, n = self.f, self.n
        t = rec.t
        for pl in self.players:
            if t in pl.x:
                rec.x[pl.pid] = pl.x[t]
                if pl.vstar[t] is not None:
                    rec.vstar = pl.vstar[t]
        keep, flip, dec = rec.classes(f)
        if keep:
            self.stats["keep_nonempty"] += 1
        rec.sigma_dir = -rec.vstar if keep else 0
        for i in range(n):
            self.sigma_corr[i] += rec.sigma_dir * rec.X[i]
        xs = list(rec.x.values())
        entries = rec.entries
        chk = self.check
        if chk and xs and max(xs) - min(xs) > f:
            raise InvariantViolation(f"iteration {t}: x spread {max(xs) - min(xs)} > f")
        if chk and flip and dec:
            raise InvariantViolation(f"iteration {t}: both flip and decide populations nonempty")
        if not keep and not dec:
            bad_bias = [p for p, e in entries.items() if e.bias != 0]
            if chk and bad_bias:
                raise InvariantViolation(f"iteration {t}: nobody carries v* but bias nonzero for {bad_bias}")
        if rec.carriers_at_board >= f + 1 and rec.vstar is not None:
            floor = (n - f) * self.params.m0 - f
            low = [p for p, e in entries.items() if rec.vstar * e.bias < floor]
            if chk and low:
                raise InvariantViolation(f"iteration {t}: forced bias below {floor} for {low}")
            if len(keep) >= f + 1:
                self.stats["forced_keep"] += 1
                if all(e.output == rec.vstar for e in entries.values()):
                    self.stats["forced_keep_unanimous"] += 1
        for e in entries.values():
            gap = abs(e.bias - rec.bias_bar)
            self.stats["max_bias_gap"] = max(self.stats["max_bias_gap"], gap)
            if chk and gap > f:
                raise InvariantViolation(f"iteration {t}: bias gap {gap} > f for player {e.player}")
        wide = [e for e in entries.values() if abs(e.total) > f]
        if wide:
            s = sgn(wide[0].total)
            if chk and any(e.output != s for e in entries.values()):
                raise InvariantViolation(f"iteration {t}: coin total beyond f but outputs differ")
            rec.escaped = True
            rec.escape_sign = s
            self.stats["escapes"] += 1
            if not (len(keep) <= f or rec.vstar is None or s == rec.vstar):
                self.stats["escapes_uncovered"] += 1
        if not self.keep_records:
            rec.entries = {}

    def _check_closure(self) -> None:
        """Decision-closure checks evaluated once the run is over."""
        good = self.good
        decided = {p: self.players[p].decided_iter for p in good}
        if any(d is not None for d in decided.values()):
            first = min(d for d in decided.values() if d is not None)
            if first + 1 <= self.built or all(d is not None for d in decided.values()):
                late = [p for p, d in decided.items() if d is None or d > first + 1]
                if late:
                    raise InvariantViolation(
                        f"closure: first decision in iteration {first}, players {late} later or never")
        for t, rec in self.records.items():
            if not rec.escaped:
                continue
            keep, _, _ = rec.classes(self.f)
            covered = len(keep) <= self.f or rec.vstar is None or rec.escape_sign == rec.vstar
            if not covered or t + 1 > self.built:
                continue
            late = [p for p, d in decided.items() if d is None or d > t + 1]
            if late:
                raise InvariantViolation(f"coin escaped in iteration {t} but players {late} decided later")

    # -- main loop -------------------------------------------------------

    def _good_all_decided(self) -> bool:
        return all(self.players[p].decided is not None for p in self.good)

    def _finished(self) -> bool:
        if self.exhausted:
            return True
        if self.stop_when_decided and self._good_all_decided():
            return True
        return self.max_iterations is not None and self.built >= self.max_iterations

    def run(self) -> RunReport:
        net = self.net
        adv = self.adversary
        self._started = True
        for pl in self.players:
            self._broadcast(pl, L1, pl.value)
        steps = 0
        while True:
            steps += 1
            if steps > self.max_steps:
                raise HarnessFault("step budget exhausted")
            if net.ready:
                net.deliver_next(adv)
                continue
            if self._finished():
                break
            if net.held:
                rel = adv.release(net.held_deliveries(), forced=False)
                if rel and net.release(rel):
                    continue
            if self._build_boards():
                continue
            if net.held:
                self.stats["forced_releases"] += 1
                net.release(adv.release(net.held_deliveries(), forced=True))
                if net.ready:
                    continue
                net.release_all()
                continue
            raise HarnessFault(f"deadlock before iteration {self.built + 1}: "
                               f"phases {[(p.t, p.phase) for p in self.players]}")
        self.stats["steps"] = steps
        self._close_iterations(final=True)
        if self.check:
            self._check_closure()
        return self._report()

    def _report(self) -> RunReport:
        good = self.good
        vals = {self.players[p].decided for p in good}
        decided = None not in vals and len(vals) == 1
        dv = vals.pop() if decided else None
        iters = max((self.players[p].decided_iter or 0) for p in good) if decided else self.built
        epochs_used = len(self.epoch_reports)
        if not self.epoch_reports or iters > self.epoch_reports[-1].last_iteration:
            epochs_used += 1
        self.stats["forced_keep_rate"] = (self.stats["forced_keep_unanimous"] / self.stats["forced_keep"]
                                          if self.stats["forced_keep"] else math.nan)
        return RunReport(
            seed=self.seed, params=self.params, adversary=self.adversary.name,
            transport=self.net.transport, inputs=self.inputs,
            decided_value=dv, decided=decided, epochs_used=epochs_used, iterations_used=iters,
            restarts=self.restart,
            latency_time=self.last_decision_time if decided else self.net.max_time,
            latency_rows=self.last_decision_rows if decided else self.history.rows_charged,
            invariant1_margins=tuple(self.margins), agreement_ok=True, validity_ok=True,
            weight_trajectory=tuple(self.trajectory), corrupt=tuple(sorted(self.corrupt)),
            epochs=tuple(self.epoch_reports), stats=dict(self.stats), deliveries=self.net.delivered,
        )


def run_protocol(params: ProtocolParams, adversary, seed=0, **kwargs) -> RunReport:
    """Run one seeded execution to decision (or until restarts run out)."""
    return Simulation(params, adversary, seed, **kwargs).run()


def run_epoch(params: ProtocolParams, adversary, seed=0, weights: Optional[Sequence[float]] = None,
              **kwargs) -> Simulation:
    """Run a single epoch of ``T`` iterations under fixed weights; returns the finished simulation."""
    kwargs.setdefault("stop_when_decided", False)
    sim = Simulation(params, adversary, seed, max_iterations=params.T, **kwargs)
    if weights is not None:
        sim.weights = [float(w) for w in weights]
        sim.trajectory = [tuple(sim.weights)]
    sim.run()
    return sim
