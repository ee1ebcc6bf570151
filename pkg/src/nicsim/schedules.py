"""Barrier communication schedules.

A schedule lists, for one rank, the rounds of a barrier.  Round ``r``'s
sends may be issued only once every await of rounds ``0..r-1`` has been
satisfied; the barrier completes when every await has been satisfied.
Round indices are global, so a send in round ``r`` from ``s`` to ``t``
is matched by an await of ``s`` in round ``r`` of ``t``'s schedule.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache


class Algorithm(enum.Enum):
    GATHER_BROADCAST = "gb"
    PAIRWISE_EXCHANGE = "pe"
    DISSEMINATION = "ds"


@dataclass(frozen=True)
class AlgorithmKind:
    algorithm: Algorithm
    degree: int | None = None

    def __post_init__(self):
        if self.algorithm is Algorithm.GATHER_BROADCAST:
            if self.degree is None:
                object.__setattr__(self, "degree", 2)
            if self.degree < 2:
                raise ValueError(f"gather-broadcast tree degree must be >= 2, got {self.degree}")
        elif self.degree is not None:
            raise ValueError(f"{self.algorithm.name} takes no degree")

    @classmethod
    def parse(cls, text: str) -> "AlgorithmKind":
        """``ds``, ``pe``, ``gb`` or ``gb:<degree>``."""
        name, _, degree = text.lower().partition(":")
        try:
            alg = Algorithm(name)
        except ValueError:
            raise ValueError(f"unknown algorithm {text!r}; expected ds, pe, gb or gb:<d>") from None
        if degree:
            return cls(alg, int(degree))
        return cls(alg)

    @property
    def label(self) -> str:
        if self.algorithm is Algorithm.GATHER_BROADCAST and self.degree != 2:
            return f"gb:{self.degree}"
        return self.algorithm.value

    def __str__(self):
        return self.label


DS = AlgorithmKind(Algorithm.DISSEMINATION)
PE = AlgorithmKind(Algorithm.PAIRWISE_EXCHANGE)
GB = AlgorithmKind(Algorithm.GATHER_BROADCAST, 2)


@dataclass(frozen=True)
class Round:
    send_to: tuple[int, ...] = ()
    await_from: tuple[int, ...] = ()


@dataclass(frozen=True)
class Schedule:
    n: int
    me: int
    rounds: tuple[Round, ...]

    @property
    def total_sends(self) -> int:
        return sum(len(r.send_to) for r in self.rounds)

    @property
    def total_awaits(self) -> int:
        return sum(len(r.await_from) for r in self.rounds)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "rank": self.me,
            "rounds": [
                {"round": i, "send_to": list(r.send_to), "await_from": list(r.await_from)}
                for i, r in enumerate(self.rounds)
            ],
        }


def ceil_log(n: int, base: int) -> int:
    """Smallest k with base**k >= n (integer arithmetic)."""
    k, p = 0, 1
    while p < n:
        p *= base
        k += 1
    return k


def floor_log2(n: int) -> int:
    return n.bit_length() - 1


def is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def num_steps(alg: AlgorithmKind, n: int) -> int:
    if n < 1:
        raise ValueError("n must be >= 1")
    a = alg.algorithm
    if a is Algorithm.DISSEMINATION:
        return ceil_log(n, 2)
    if a is Algorithm.PAIRWISE_EXCHANGE:
        if is_pow2(n):
            return floor_log2(n)
        return floor_log2(n) + 2
    return 2 * ceil_log(n, alg.degree)


def build_schedule(alg: AlgorithmKind, n: int, me: int) -> Schedule:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= me < n:
        raise ValueError(f"rank {me} out of range for n={n}")
    return _build(alg, n, me)


@lru_cache(maxsize=4096)
def _build(alg: AlgorithmKind, n: int, me: int) -> Schedule:
    if n == 1:
        return Schedule(n, me, ())
    a = alg.algorithm
    if a is Algorithm.DISSEMINATION:
        rounds = _dissemination(n, me)
    elif a is Algorithm.PAIRWISE_EXCHANGE:
        rounds = _pairwise(n, me)
    else:
        rounds = _gather_broadcast(n, me, alg.degree)
    return Schedule(n, me, tuple(rounds))


def _dissemination(n, me):
    return [
        Round(((me + (1 << m)) % n,), ((me - (1 << m)) % n,))
        for m in range(ceil_log(n, 2))
    ]


def _pairwise(n, me):
    if is_pow2(n):
        return [Round((me ^ (1 << m),), (me ^ (1 << m),)) for m in range(floor_log2(n))]
    m_pow = 1 << floor_log2(n)
    k = floor_log2(n)
    rounds = []
    if me >= m_pow:
        low = me - m_pow
        rounds.append(Round(send_to=(low,)))
        rounds.extend(Round() for _ in range(k))
        rounds.append(Round(await_from=(low,)))
        return rounds
    high = me + m_pow
    has_high = high < n
    rounds.append(Round(await_from=(high,) if has_high else ()))
    rounds.extend(Round((me ^ (1 << m),), (me ^ (1 << m),)) for m in range(k))
    rounds.append(Round(send_to=(high,) if has_high else ()))
    return rounds


def _gather_broadcast(n, me, d):
    # d-nomial tree rooted at rank 0: in gather round k, ranks r with
    # r mod d**(k+1) == j*d**k (j = 1..d-1) report to r - j*d**k.
    depth = ceil_log(n, d)
    gather = [Round() for _ in range(depth)]
    for k in range(depth):
        step = d**k
        block = step * d
        if me % block == 0:
            kids = tuple(me + j * step for j in range(1, d) if me + j * step < n)
            gather[k] = Round(await_from=kids)
        elif me % step == 0:
            gather[k] = Round(send_to=(me - (me % block),))
    # broadcast mirrors the gather, release flowing parent -> children
    bcast = [Round(send_to=r.await_from, await_from=r.send_to) for r in reversed(gather)]
    return gather + bcast


def build_all(alg: AlgorithmKind, n: int) -> list[Schedule]:
    return [build_schedule(alg, n, r) for r in range(n)]


# ---------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    kind: str  # "dangling-send", "dangling-await", "self-send", "deadlock", "shape"
    round: int
    sender: int
    receiver: int

    def __str__(self):
        return f"{self.kind}: round {self.round}, {self.sender} -> {self.receiver}"


def validate_schedules(schedules: list[Schedule]) -> Violation | None:
    """None if the schedules match up and run to completion, else the first violation."""
    n = len(schedules)
    for i, s in enumerate(schedules):
        if s.n != n or s.me != i:
            return Violation("shape", -1, i, i)
    sends: Counter = Counter()
    awaits: Counter = Counter()
    for s in schedules:
        for r, rnd in enumerate(s.rounds):
            for t in rnd.send_to:
                if t == s.me:
                    return Violation("self-send", r, s.me, t)
                if not 0 <= t < n:
                    return Violation("dangling-send", r, s.me, t)
                sends[(r, s.me, t)] += 1
            for f in rnd.await_from:
                awaits[(r, f, s.me)] += 1
    for key in sorted(sends):
        if awaits[key] != sends[key]:
            return Violation("dangling-send", *key)
    for key in sorted(awaits):
        if sends[key] != awaits[key]:
            return Violation("dangling-await", *key)
    stuck = _dataflow(schedules)
    if stuck is not None:
        return stuck
    return None


def _dataflow(schedules):
    """Run the schedules with unordered delivery; report where they stall."""
    n = len(schedules)
    pos = [0] * n  # next round whose sends are not yet issued
    arrived = [set() for _ in range(n)]
    done = [len(s.rounds) == 0 for s in schedules]
    progress = True
    while progress:
        progress = False
        for i, s in enumerate(schedules):
            while not done[i]:
                r = pos[i]
                if r > 0 and not all((r - 1, f) in arrived[i] for f in s.rounds[r - 1].await_from):
                    break
                if r == len(s.rounds):
                    done[i] = True
                    progress = True
                    break
                for t in s.rounds[r].send_to:
                    arrived[t].add((r, i))
                pos[i] += 1
                progress = True
    for i, s in enumerate(schedules):
        if not done[i]:
            r = pos[i] - 1
            missing = [f for f in s.rounds[r].await_from if (r, f) not in arrived[i]]
            return Violation("deadlock", r, missing[0], i)
    return None
