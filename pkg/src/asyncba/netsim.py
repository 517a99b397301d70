"""Deterministic message layer with adversarial delivery order.

Two transports share one queue discipline:

* ``"bracha"`` runs the classical echo/ready reliable broadcast message by message;
* ``"direct"`` delivers one ACCEPT event per (broadcast, recipient), which is the
  observable contract of reliable broadcast when the sender follows protocol.

Every delivery is stamped ``send_time + 1`` (one causal hop, the maximum delay
under the latency convention).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Hashable, Iterable, Optional

from .core import HarnessFault

DELAY = 1.0


class Kind(str, Enum):
    INIT = "INIT"
    ECHO = "ECHO"
    READY = "READY"
    ACCEPT = "ACCEPT"


BroadcastId = tuple  # (origin, tag)


def format_bid(bid: BroadcastId) -> str:
    origin, tag = bid
    if isinstance(tag, tuple):
        tag = "/".join(str(x) for x in tag)
    return f"{origin}/{tag}"


@dataclass(frozen=True)
class Message:
    sender: int
    kind: Kind
    bid: BroadcastId
    value: Any
    send_time: float

    @property
    def origin(self) -> int:
        return self.bid[0]

    @property
    def tag(self) -> Hashable:
        return self.bid[1]


@dataclass(frozen=True)
class Delivery:
    seq: int
    msg: Message
    recipient: int


class FifoScheduler:
    """Baseline scheduler: deliver in enqueue order, hold nothing."""

    def hold(self, delivery: Delivery, net: "Network") -> bool:
        return False

    def pick(self, ready, net: "Network") -> int:
        return 0


@dataclass
class _RbcSlot:
    echoed: bool = False
    readied: bool = False
    accepted: Any = None
    has_accepted: bool = False
    echoes: dict = field(default_factory=dict)  # value -> set(senders)
    readys: dict = field(default_factory=dict)


AcceptCallback = Callable[[int, BroadcastId, Any, float], None]


class Network:
    """Event queue plus reliable-broadcast state for ``n`` players."""

    def __init__(
        self,
        n: int,
        f: int,
        transport: str = "bracha",
        scheduler=None,
        on_accept: Optional[AcceptCallback] = None,
        trace: Optional[list] = None,
    ):
        if transport not in ("bracha", "direct"):
            raise ValueError(f"unknown transport {transport!r}")
        self.n = n
        self.f = f
        self.transport = transport
        self.scheduler = scheduler or FifoScheduler()
        self.on_accept = on_accept
        self.trace = trace
        self.echo_threshold = math.ceil((n + f + 1) / 2)
        self.ready_amplify = f + 1
        self.accept_threshold = 2 * f + 1
        self.ready: deque[Delivery] = deque()
        self.held: dict[int, Delivery] = {}
        self.delivered = 0
        self.max_time = 0.0
        self._seq = 0
        self._bids: set = set()
        self._slots: dict = {}  # (recipient, bid) -> _RbcSlot
        self.accepted: dict = {}  # bid -> {recipient: value}

    # -- queue -------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.ready) + len(self.held)

    def _enqueue(self, msg: Message, recipient: int) -> None:
        d = Delivery(self._seq, msg, recipient)
        self._seq += 1
        if self.scheduler.hold(d, self):
            self.held[d.seq] = d
        else:
            self.ready.append(d)

    def held_deliveries(self) -> list[Delivery]:
        return list(self.held.values())

    def release(self, deliveries: Iterable[Delivery]) -> int:
        """Move held deliveries into the ready queue, oldest first."""
        moved = sorted((d for d in deliveries if d.seq in self.held), key=lambda d: d.seq)
        for d in moved:
            del self.held[d.seq]
            self.ready.append(d)
        return len(moved)

    def release_all(self) -> int:
        return self.release(list(self.held.values()))

    # -- sending -----------------------------------------------------------

    def rbc_broadcast(self, sender: int, tag: Hashable, value: Any, time: float = 0.0) -> BroadcastId:
        """Start a reliable broadcast of ``value``; returns its broadcast id."""
        bid = (sender, tag)
        if bid in self._bids:
            raise ValueError(f"duplicate broadcast id {format_bid(bid)}")
        self._bids.add(bid)
        kind = Kind.INIT if self.transport == "bracha" else Kind.ACCEPT
        msg = Message(sender, kind, bid, value, time)
        for r in range(self.n):
            self._enqueue(msg, r)
        return bid

    def inject(self, sender: int, kind: Kind, bid: BroadcastId, value: Any,
               recipients: Iterable[int], time: float = 0.0) -> None:
        """Send a raw protocol message (used to model an equivocating sender)."""
        self._bids.add(bid)
        msg = Message(sender, Kind(kind), bid, value, time)
        for r in recipients:
            self._enqueue(msg, r)

    def _send_all(self, sender: int, kind: Kind, bid: BroadcastId, value: Any, time: float) -> None:
        msg = Message(sender, kind, bid, value, time)
        for r in range(self.n):
            self._enqueue(msg, r)

    # -- delivery ----------------------------------------------------------

    def deliver_next(self, adversary=None):
        """Deliver one pending message chosen by ``adversary``.

        Returns ``(message, recipient, time)`` or ``None`` when nothing is ready.
        """
        if not self.ready:
            return None
        sched = adversary or self.scheduler
        idx = sched.pick(self.ready, self)
        if not isinstance(idx, int) or not 0 <= idx < len(self.ready):
            raise HarnessFault(f"scheduler picked non-pending index {idx!r}")
        if idx == 0:
            d = self.ready.popleft()
        else:
            d = self.ready[idx]
            del self.ready[idx]
        msg, r = d.msg, d.recipient
        time = msg.send_time + DELAY
        self.delivered += 1
        if time > self.max_time:
            self.max_time = time
        if self.trace is not None:
            self.trace.append(f"{time:g}\t{msg.sender}\t{r}\t{msg.kind.value}\t{format_bid(msg.bid)}")
        self._process(msg, r, time)
        return msg, r, time

    def _slot(self, r: int, bid: BroadcastId) -> _RbcSlot:
        key = (r, bid)
        slot = self._slots.get(key)
        if slot is None:
            slot = self._slots[key] = _RbcSlot()
        return slot

    def _process(self, msg: Message, r: int, time: float) -> None:
        if msg.kind is Kind.ACCEPT:
            slot = self._slot(r, msg.bid)
            if not slot.has_accepted:
                self._accept(slot, r, msg.bid, msg.value, time)
            return
        slot = self._slot(r, msg.bid)
        if msg.kind is Kind.INIT:
            if msg.sender != msg.origin:
                return  # only the origin may initiate
            if not slot.echoed:
                slot.echoed = True
                self._send_all(r, Kind.ECHO, msg.bid, msg.value, time)
        elif msg.kind is Kind.ECHO:
            senders = slot.echoes.setdefault(msg.value, set())
            senders.add(msg.sender)
            if not slot.readied and len(senders) >= self.echo_threshold:
                slot.readied = True
                self._send_all(r, Kind.READY, msg.bid, msg.value, time)
        elif msg.kind is Kind.READY:
            senders = slot.readys.setdefault(msg.value, set())
            senders.add(msg.sender)
            if not slot.readied and len(senders) >= self.ready_amplify:
                slot.readied = True
                self._send_all(r, Kind.READY, msg.bid, msg.value, time)
            if not slot.has_accepted and len(senders) >= self.accept_threshold:
                self._accept(slot, r, msg.bid, msg.value, time)

    def _accept(self, slot: _RbcSlot, r: int, bid: BroadcastId, value: Any, time: float) -> None:
        slot.has_accepted = True
        slot.accepted = value
        self.accepted.setdefault(bid, {})[r] = value
        if self.on_accept is not None:
            self.on_accept(r, bid, value, time)

    def run(self, adversary=None, max_steps: int = 10_000_000) -> int:
        """Deliver until the ready queue is empty; returns deliveries made."""
        steps = 0
        while self.ready:
            if steps >= max_steps:
                raise HarnessFault("delivery budget exhausted")
            self.deliver_next(adversary)
            steps += 1
        return steps


class Validator:
    """Per-recipient validation with justification predicates and a re-check queue.

    ``kind_of(msg)`` maps an accepted message to the key of its predicate;
    ``predicate(recipient, msg)`` decides whether what the recipient has
    validated so far justifies ``msg``. Messages failing the check wait in a
    queue and are re-examined whenever the recipient's state grows.
    """

    def __init__(self, n: int, kind_of: Callable[[Message], Hashable],
                 on_valid: Optional[Callable[[int, Message], None]] = None):
        self.n = n
        self.kind_of = kind_of
        self.on_valid = on_valid
        self.rules: dict = {}
        self.pending: list[list[Message]] = [[] for _ in range(n)]
        self.validated: list[set] = [set() for _ in range(n)]
        self._draining = [False] * n
        self._dirty = [False] * n

    def register(self, kind: Hashable, predicate: Callable[[int, Message], bool]) -> None:
        self.rules[kind] = predicate

    def _justified(self, recipient: int, msg: Message) -> bool:
        rule = self.rules.get(self.kind_of(msg))
        if rule is None:
            raise HarnessFault(f"no validation rule for {self.kind_of(msg)!r}")
        return bool(rule(recipient, msg))

    def validate(self, recipient: int, msg: Message) -> bool:
        """True iff ``msg`` is (or can now be) validated by ``recipient``."""
        if msg.bid in self.validated[recipient]:
            return True
        return self._justified(recipient, msg)

    def submit(self, recipient: int, msg: Message) -> None:
        self.pending[recipient].append(msg)
        self.recheck(recipient)

    def recheck(self, recipient: int) -> None:
        if self._draining[recipient]:
            self._dirty[recipient] = True
            return
        self._draining[recipient] = True
        try:
            progress = True
            while progress:
                progress = False
                self._dirty[recipient] = False
                queue = self.pending[recipient]
                i = 0
                while i < len(queue):
                    msg = queue[i]
                    if self._justified(recipient, msg):
                        queue.pop(i)
                        self.validated[recipient].add(msg.bid)
                        if self.on_valid is not None:
                            self.on_valid(recipient, msg)
                        progress = True
                    else:
                        i += 1
                if self._dirty[recipient]:
                    progress = True
        finally:
            self._draining[recipient] = False
