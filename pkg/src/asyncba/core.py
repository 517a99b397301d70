"""Shared domain types: values, the sign convention and protocol parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

PLUS = 1
MINUS = -1
BOT = None  # undecided value / unwritten cell; counts as 0 in every sum

Value = Optional[int]

_EPS_TOL = 1e-9


class ParamError(ValueError):
    """Raised for parameter combinations outside the supported range."""


class HarnessFault(RuntimeError):
    """An adversary or caller broke a contract the simulator relies on."""


class SafetyViolation(RuntimeError):
    """Agreement or validity was violated. Must never happen."""


class InvariantViolation(AssertionError):
    """A deterministic protocol invariant failed during a checked run."""


def sgn(x: float) -> int:
    """Return +1 when ``x >= 0`` and -1 otherwise (never BOT)."""
    if not math.isfinite(x):
        raise ValueError(f"sgn of non-finite value {x!r}")
    return PLUS if x >= 0 else MINUS


def as_cell(v: Value) -> int:
    return 0 if v is None else v


@dataclass(frozen=True)
class ProtocolParams:
    n: int
    f: int
    epsilon: float
    m: int
    m0: int
    T: int
    c: float
    xmax: int
    beta: float
    w_min: float
    k_max: int

    @property
    def quorum(self) -> int:
        """Number of validated messages every wait step blocks on."""
        return self.n - self.f

    @property
    def c_ln_n(self) -> float:
        return self.c * math.log(self.n)

    @property
    def edge_scale(self) -> float:
        """Multiplier turning correlation excess into edge capacity."""
        return 8.0 / (self.epsilon ** 2 * self.f * self.m * self.T)

    def rows(self, board: int) -> int:
        """Row count of board ``board`` (1-based): odd boards m0, even boards m."""
        return self.m0 if board % 2 else self.m


def derive_params(f: int, epsilon: float, m: int, T: int, c: float) -> ProtocolParams:
    """Build a validated :class:`ProtocolParams` from the free parameters.

    ``n`` is the ceiling of ``(3 + epsilon) * f``; every other constant follows
    from ``(n, m, T, c)``.
    """
    if int(f) != f or f < 1:
        raise ParamError(f"f must be a positive integer, got {f!r}")
    f = int(f)
    if not (1.0 / f - _EPS_TOL <= epsilon <= 0.5 + _EPS_TOL):
        raise ParamError(f"epsilon={epsilon} outside [1/f, 1/2] = [{1.0 / f:.6g}, 0.5]")
    for name, val in (("m", m), ("T", T)):
        if int(val) != val or val < 1:
            raise ParamError(f"{name} must be a positive integer, got {val!r}")
    if not c > 0:
        raise ParamError(f"c must be positive, got {c!r}")
    m, T = int(m), int(T)

    n = math.ceil((3.0 + epsilon) * f - 1e-9)
    c_ln_n = c * math.log(n)
    m0 = math.ceil(math.sqrt(m * c_ln_n) - 1e-9)
    beta = m * math.sqrt(T * c_ln_n ** 3)
    return ProtocolParams(
        n=n,
        f=f,
        epsilon=float(epsilon),
        m=m,
        m0=m0,
        T=T,
        c=float(c),
        xmax=m0,
        beta=beta,
        w_min=math.sqrt(n) / T,
        k_max=3 * f,
    )
