"""Correlation tracking, excess graph, Rising-Tide matching and weight updates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .blackboard import BlackboardView
from .coinflip import clamp, coin_board
from .core import InvariantViolation, ProtocolParams

SAT_TOL = 1e-9


# -- correlations -------------------------------------------------------------

def column_sums(view: BlackboardView, iterations: Iterable[int], xmax: int) -> np.ndarray:
    """Clamped coin-board column sums, one row per iteration (integers)."""
    n = view.history.n
    rows = [[clamp(view.column_sum(coin_board(t), q), xmax) for q in range(n)] for t in iterations]
    return np.asarray(rows, dtype=np.int64).reshape(len(rows), n)


def weighted(counts: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    corr = np.outer(w, w) * counts
    np.fill_diagonal(corr, 0.0)
    return corr


def correlation_counts(view: BlackboardView, iterations: Iterable[int], xmax: int) -> np.ndarray:
    """Unweighted ``sum_t X_i(t) X_j(t)`` as an exact integer matrix."""
    x = column_sums(view, iterations, xmax)
    return x.T @ x


def accumulate_correlations(view: BlackboardView, iterations: Iterable[int],
                            weights: Sequence[float], xmax: int) -> np.ndarray:
    """Weighted correlation matrix ``corr(i, j) = w_i w_j sum_t X_i(t) X_j(t)``."""
    return weighted(correlation_counts(view, iterations, xmax), weights)


class CorrelationAccumulator:
    """Running integer Gram matrix of clamped column sums for one epoch."""

    def __init__(self, n: int):
        self.n = n
        self.counts = np.zeros((n, n), dtype=np.int64)
        self.iterations = 0

    def add(self, x: Sequence[int]) -> None:
        v = np.asarray(x, dtype=np.int64)
        self.counts += np.outer(v, v)
        self.iterations += 1

    def matrix(self, weights: Sequence[float]) -> np.ndarray:
        return weighted(self.counts, weights)


# -- excess graph and matching -----------------------------------------------

@dataclass(frozen=True)
class ExcessGraph:
    cap_v: np.ndarray
    cap_e: np.ndarray

    @property
    def n(self) -> int:
        return len(self.cap_v)

    def edges(self) -> list[tuple[int, int]]:
        n = self.n
        return [(i, j) for i in range(n) for j in range(i + 1, n) if self.cap_e[i, j] > 0]


def make_graph(cap_v, cap_e) -> ExcessGraph:
    cap_v = np.array(cap_v, dtype=float)
    cap_e = np.array(cap_e, dtype=float)
    n = len(cap_v)
    if cap_e.shape != (n, n):
        raise ValueError(f"edge capacities must be {n}x{n}, got {cap_e.shape}")
    cap_e = np.triu(cap_e, 1)
    cap_e = cap_e + cap_e.T
    return ExcessGraph(cap_v, cap_e)


def build_excess_graph(corr: np.ndarray, weights: Sequence[float], params: ProtocolParams) -> ExcessGraph:
    """Capacities from negative correlation in excess of ``w_i w_j beta``."""
    w = np.asarray(weights, dtype=float)
    excess = -np.asarray(corr, dtype=float) - np.outer(w, w) * params.beta
    cap_e = params.edge_scale * np.maximum(0.0, excess)
    np.fill_diagonal(cap_e, 0.0)
    cap_e = np.triu(cap_e, 1)
    return ExcessGraph(w.copy(), cap_e + cap_e.T)


@dataclass(frozen=True)
class FractionalMatching:
    mu: np.ndarray
    rounds: int = 0

    def load(self) -> np.ndarray:
        return self.mu.sum(axis=1)

    def residual(self, graph: ExcessGraph) -> np.ndarray:
        return graph.cap_v - self.load()


def _check_caps(graph: ExcessGraph) -> None:
    if not (np.all(np.isfinite(graph.cap_v)) and np.all(np.isfinite(graph.cap_e))):
        raise ValueError("capacities must be finite")
    if (graph.cap_v < 0).any() or (graph.cap_e < 0).any():
        raise ValueError("capacities must be nonnegative")


def rising_tide(graph: ExcessGraph, tol: float = SAT_TOL) -> FractionalMatching:
    """Maximal fractional matching by lockstep growth of every unfrozen edge.

    Each round raises all active edges by the largest amount that keeps the
    matching feasible, then freezes every edge that has hit its own capacity
    or touches a saturated vertex.
    """
    _check_caps(graph)
    n = graph.n
    cap_v = graph.cap_v.tolist()
    cap_e = graph.cap_e
    mu = np.zeros((n, n))
    load = [0.0] * n
    active = [(i, j) for i in range(n) for j in range(i + 1, n) if cap_e[i, j] > 0]
    level = {e: 0.0 for e in active}
    rounds = 0
    while active:
        deg = [0] * n
        for i, j in active:
            deg[i] += 1
            deg[j] += 1
        rise = min(cap_e[i, j] - level[(i, j)] for i, j in active)
        for v in range(n):
            if deg[v]:
                rise = min(rise, (cap_v[v] - load[v]) / deg[v])
        rise = max(rise, 0.0)
        for e in active:
            level[e] += rise
        for v in range(n):
            if deg[v]:
                load[v] += rise * deg[v]
        active = [(i, j) for i, j in active
                  if cap_e[i, j] - level[(i, j)] > tol
                  and cap_v[i] - load[i] > tol and cap_v[j] - load[j] > tol]
        rounds += 1
    for (i, j), val in level.items():
        mu[i, j] = mu[j, i] = val
    return FractionalMatching(mu, rounds)


def matching_problems(graph: ExcessGraph, matching: FractionalMatching, tol: float = SAT_TOL) -> list[str]:
    """Feasibility and maximality violations (empty list when both hold)."""
    mu = matching.mu
    out = []
    if (mu < -tol).any():
        out.append("negative edge value")
    if not np.allclose(mu, mu.T, atol=0):
        out.append("asymmetric matching")
    over_e = mu - graph.cap_e
    if (over_e > tol).any():
        i, j = np.unravel_index(np.argmax(over_e), mu.shape)
        out.append(f"edge ({i},{j}) over capacity by {over_e[i, j]:.3g}")
    slack_v = graph.cap_v - mu.sum(axis=1)
    if (slack_v < -tol).any():
        out.append(f"vertex {int(np.argmin(slack_v))} over capacity by {-slack_v.min():.3g}")
    n = graph.n
    for i in range(n):
        for j in range(i + 1, n):
            if graph.cap_e[i, j] - mu[i, j] > tol and slack_v[i] > tol and slack_v[j] > tol:
                out.append(f"edge ({i},{j}) could still grow")
    return out


# -- weights -------------------------------------------------------------------

def weight_update(weights: Sequence[float], local_matchings: Sequence[FractionalMatching],
                  w_min: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-player local weight vectors and the consensus vector for the next epoch.

    Row ``p`` of the returned local matrix is ``w - load(mu^(p))``; the consensus
    entry for ``i`` is player ``i``'s own local value, zeroed at or below ``w_min``.
    """
    w = np.asarray(weights, dtype=float)
    n = len(w)
    local = np.empty((n, n))
    for p, match in enumerate(local_matchings):
        row = w - match.load()
        if (row < -SAT_TOL).any():
            i = int(np.argmin(row))
            raise InvariantViolation(f"player {p}: local weight of {i} went negative ({row[i]:.3g})")
        local[p] = np.maximum(row, 0.0)
    diag = np.diag(local).copy()
    consensus = np.where(diag > w_min, diag, 0.0)
    return local, consensus


def check_invariant1(weights: Sequence[float], good: Iterable[int], bad: Iterable[int],
                     epsilon: float, f: int) -> float:
    """Slack of ``sum_G (1-w) <= sum_B (1-w) + eps^4 f``; nonnegative means it holds."""
    w = list(weights)
    lost_g = sum(1.0 - w[i] for i in good)
    lost_b = sum(1.0 - w[i] for i in bad)
    return lost_b + epsilon ** 4 * f - lost_g


def epoch_invariant_margin(weights: Sequence[float], good: Iterable[int], bad: Iterable[int],
                           params: ProtocolParams, k: int) -> float:
    """The tighter per-epoch form: allowance ``eps^4 / sqrt(n ln^6 n) * (k - 1)``."""
    w = list(weights)
    n = params.n
    allowance = params.epsilon ** 4 / math.sqrt(n * math.log(n) ** 6) * (k - 1)
    return sum(1.0 - w[i] for i in bad) + allowance - sum(1.0 - w[i] for i in good)


def bad_incident_capacity(graph: ExcessGraph, bad: Iterable[int]) -> float:
    bad = set(bad)
    n = graph.n
    return float(sum(graph.cap_e[i, j] for i in range(n) for j in range(i + 1, n)
                     if i in bad or j in bad))


@dataclass(frozen=True)
class ProgressCheck:
    flagged: bool
    ok: bool
    capacity: float
    removed_from_bad: float
    saturated: tuple
    bad_saturated: tuple


def blacklisting_progress(graph: ExcessGraph, matching: FractionalMatching, bad: Iterable[int],
                          w_min: float, tol: float = SAT_TOL) -> ProgressCheck:
    """When bad-incident capacity is at least 1, a vertex above ``w_min`` saturates
    or the bad players lose at least one unit of weight in total."""
    bad = sorted(set(bad))
    cap = bad_incident_capacity(graph, bad)
    load = matching.load()
    residual = graph.cap_v - load
    sat = tuple(i for i in range(graph.n) if graph.cap_v[i] > w_min and residual[i] <= tol)
    removed = float(sum(load[i] for i in bad))
    flagged = cap >= 1.0
    ok = (not flagged) or bool(sat) or removed >= 1.0 - tol
    return ProgressCheck(flagged, ok, cap, removed, sat, tuple(i for i in sat if i in bad))


def max_good_excess(corr: np.ndarray, weights: Sequence[float], good: Iterable[int], beta: float) -> float:
    """Largest ``-corr(i,j) - w_i w_j beta`` over good pairs (negative when none exceed)."""
    good = sorted(good)
    best = -math.inf
    for a, i in enumerate(good):
        for j in good[a + 1:]:
            best = max(best, -corr[i, j] - weights[i] * weights[j] * beta)
    return best
