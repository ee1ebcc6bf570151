"""Deterministic discrete-event engine.

Time is kept as integer nanoseconds.  Events fire in ``(fire_at, seq)``
order, so simultaneous events are dispatched FIFO.  Randomness comes from
:class:`Rng`, a Mersenne Twister (CPython's ``random.Random``) whose seed is
derived with BLAKE2b from ``(seed, entity)``; ``random()`` and
``getrandbits()`` on that generator are stable across platforms and
Python releases.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Callable, Hashable

MAX_TIME = 2**63 - 1
DEFAULT_EVENT_BUDGET = 10**8


class SimulationError(RuntimeError):
    """Base class for failures raised while a simulation runs."""


class EventBudgetExceeded(SimulationError):
    """Too many dispatches; the model is probably livelocked."""


class ProtocolCorruption(SimulationError):
    """A protocol state machine saw something its invariants forbid."""


# ---------------------------------------------------------------- time


def us(value: float | str | Decimal) -> int:
    """Microseconds to integer nanoseconds (half-up)."""
    ns = (Decimal(str(value)) * 1000).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return check_time(int(ns))


def to_us(ns: int) -> float:
    return ns / 1000.0


def fmt_us(ns: int | float) -> str:
    """Format nanoseconds as microseconds with two decimals, half-up."""
    d = (Decimal(ns) / 1000).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    return f"{d:.2f}"


def check_time(t: int) -> int:
    if t < 0:
        raise ValueError(f"negative simulation time: {t}")
    if t > MAX_TIME:
        raise OverflowError(f"simulation time overflow: {t}")
    return t


# ---------------------------------------------------------------- rng


def derive_seed(seed: int, entity: Hashable = None) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update((int(seed) & (2**64 - 1)).to_bytes(8, "little"))
    h.update(repr(entity).encode())
    return int.from_bytes(h.digest(), "little")


class Rng:
    """Seeded pseudo-random stream; ``split`` gives independent child streams."""

    def __init__(self, seed: int, entity: Hashable = None):
        self.seed = int(seed) & (2**64 - 1)
        self.entity = entity
        self._r = random.Random(derive_seed(self.seed, entity))
        # bound methods: hot path in loss sampling
        self.random = self._r.random

    def split(self, entity: Hashable) -> "Rng":
        key = entity if self.entity is None else (self.entity, entity)
        return Rng(self.seed, key)

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        k = n.bit_length()
        while True:
            r = self._r.getrandbits(k)
            if r < n:
                return r

    def uniform_ns(self, hi: int) -> int:
        """Uniform integer in ``[0, hi]``."""
        return 0 if hi <= 0 else self.below(hi + 1)


# ---------------------------------------------------------------- engine


class EventHandle:
    __slots__ = ("fire_at", "seq", "target", "payload", "state")

    PENDING, FIRED, CANCELLED = 0, 1, 2

    def __init__(self, fire_at, seq, target, payload):
        self.fire_at = fire_at
        self.seq = seq
        self.target = target
        self.payload = payload
        self.state = EventHandle.PENDING

    def __repr__(self):
        return f"EventHandle(fire_at={self.fire_at}, seq={self.seq}, target={self.target!r})"

    @property
    def pending(self) -> bool:
        return self.state == EventHandle.PENDING


class Engine:
    """Single-threaded event loop.

    Entities are registered with :meth:`register`; an event targets an
    entity id and its payload is handed to that entity's handler.
    """

    def __init__(self, event_budget: int = DEFAULT_EVENT_BUDGET, record_log: bool = False):
        self.now = 0
        self.event_budget = event_budget
        self.dispatched = 0
        self._queue: list[tuple[int, int, EventHandle]] = []
        self._seq = 0
        self._handlers: dict[Hashable, Callable[[Any], None]] = {}
        self.log: list[tuple[int, int, Hashable, str]] | None = [] if record_log else None

    def register(self, target: Hashable, handler: Callable[[Any], None]) -> None:
        if target in self._handlers:
            raise ValueError(f"entity {target!r} already registered")
        self._handlers[target] = handler

    def schedule(self, at: int, target: Hashable, payload: Any = None) -> EventHandle:
        if at < self.now:
            raise ValueError(f"cannot schedule at {at} ns; now is {self.now} ns")
        if at > MAX_TIME:
            raise OverflowError(f"simulation time overflow: {at}")
        ev = EventHandle(at, self._seq, target, payload)
        self._seq += 1
        heapq.heappush(self._queue, (at, ev.seq, ev))
        return ev

    def after(self, delay: int, target: Hashable, payload: Any = None) -> EventHandle:
        return self.schedule(self.now + delay, target, payload)

    @staticmethod
    def cancel(handle: EventHandle) -> bool:
        if handle.state != EventHandle.PENDING:
            return False
        handle.state = EventHandle.CANCELLED
        return True

    def run_until_idle(self, until: int | None = None) -> int:
        """Dispatch until the queue is empty, or only events after ``until`` remain."""
        last = self.now
        queue = self._queue
        handlers = self._handlers
        log = self.log
        pop = heapq.heappop
        while queue:
            if until is not None and queue[0][0] > until:
                break
            ev = pop(queue)[2]
            if ev.state != EventHandle.PENDING:
                continue
            self.dispatched += 1
            if self.dispatched > self.event_budget:
                raise EventBudgetExceeded(
                    f"event budget of {self.event_budget} dispatches exceeded at t={ev.fire_at} ns "
                    f"(target {ev.target!r}); likely livelock"
                )
            ev.state = EventHandle.FIRED
            self.now = last = ev.fire_at
            if log is not None:
                log.append((ev.fire_at, ev.seq, ev.target, payload_digest(ev.payload)))
            handlers[ev.target](ev.payload)
        return last

    def log_digest(self) -> str:
        if self.log is None:
            raise RuntimeError("engine was created without record_log=True")
        h = hashlib.sha256()
        for row in self.log:
            h.update(repr(row).encode())
        return h.hexdigest()


def payload_digest(payload: Any) -> str:
    return hashlib.blake2b(repr(payload).encode(), digest_size=8).hexdigest()
