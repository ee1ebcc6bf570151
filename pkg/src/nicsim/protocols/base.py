"""Machinery shared by every barrier mode: packets, the wire, per-node
processors, the consecutive-barrier driver and the packet trace."""

from __future__ import annotations

import enum
from collections import Counter
from operator import itemgetter
from dataclasses import dataclass, field
from typing import Callable

from ..engine import DEFAULT_EVENT_BUDGET, Engine, ProtocolCorruption, Rng
from ..schedules import Schedule
from ..topology import CostModel, Placement, should_drop, transit_table

HEADER_BYTES = 16
INT_BYTES = 4


class Kind(str, enum.Enum):
    BARRIER = "BARRIER"
    NACK = "NACK"
    DATA = "DATA"
    ACK = "ACK"
    RDMA = "RDMA"

    def __str__(self):
        return self.value


@dataclass(slots=True)
class Packet:
    src: int
    dst: int
    kind: Kind
    group: int
    round: int
    seq: int  # barrier sequence number
    size: int = HEADER_BYTES + INT_BYTES
    tseq: int = -1  # per-(src, dst) transport sequence, point-to-point only


TRACE_COLUMNS = ("time_ns", "kind", "src", "dst", "group", "round", "seq", "action")


@dataclass
class RunResult:
    """Raw outcome of one simulated run of consecutive barriers."""

    n: int
    entries: list[list[int]]  # entries[k][rank]
    completions: list[list[int]]  # completions[k][rank]
    sent: Counter = field(default_factory=Counter)  # by Kind, first transmissions + retransmissions
    dropped: Counter = field(default_factory=Counter)  # by Kind, lost on the wire
    retransmits: int = 0
    lookahead_violations: int = 0
    max_retries: int = 0
    end_time: int = 0
    trace: list[tuple] | None = None
    events: int = 0

    def iteration_sums(self) -> list[int]:
        """Per-iteration latency summed over ranks (ns).

        Iteration ``k`` at rank ``r`` spans from the end of barrier ``k-1``
        to the end of barrier ``k``, i.e. a rank's loop time.
        """
        out = []
        prev = [0] * self.n
        for comp in self.completions:
            out.append(sum(c - p for c, p in zip(comp, prev)))
            prev = comp
        return out

    def sorted_trace(self) -> list[tuple]:
        if self.trace is None:
            return []
        return sorted(self.trace, key=itemgetter(0))  # stable: ties keep log order

    def packet_counts(self) -> Counter:
        """(kind, src, dst) -> number of transmissions, from the trace."""
        return count_packets(self.sorted_trace())


def count_packets(trace) -> Counter:
    counts: Counter = Counter()
    for row in trace:
        _, kind, src, dst, _, _, _, action = row
        if action in ("send", "retransmit"):
            counts[(str(kind), src, dst)] += 1
    return counts


DropRule = Callable[[Packet, str], bool]


class BarrierSimulation:
    """Runs ``iterations`` consecutive barriers on ``n`` simulated nodes.

    Subclasses implement ``enter_barrier(rank, k)`` and ``on_nic(rank, msg)``
    and call :meth:`barrier_complete` when a host learns barrier ``k`` is over.
    """

    mode = "abstract"

    def __init__(
        self,
        model: CostModel,
        schedules: list[Schedule],
        placement: Placement | None = None,
        *,
        iterations: int = 1,
        seed: int = 0,
        host_skew: int = 0,
        trace: bool = False,
        drop_rule: DropRule | None = None,
        event_budget: int = DEFAULT_EVENT_BUDGET,
        record_log: bool = False,
    ):
        self.n = n = len(schedules)
        if placement is None:
            placement = Placement.identity(n)
        if placement.n_ranks != n:
            raise ValueError("placement and schedules disagree on n")
        self.model = model
        self.schedules = schedules
        self.placement = placement
        self.iterations = iterations
        self.host_skew = host_skew
        self.drop_rule = drop_rule
        self.engine = Engine(event_budget=event_budget, record_log=record_log)
        self.rng = Rng(seed)
        self._loss_rng = [self.rng.split(("loss", r)) for r in range(n)]
        self._skew_rng = [self.rng.split(("skew", r)) for r in range(n)]
        self.transit = transit_table(model, placement)
        self.nic_free = [0] * n
        self.host_free = [0] * n
        self.result = RunResult(
            n=n,
            entries=[[0] * n for _ in range(iterations)],
            completions=[[0] * n for _ in range(iterations)],
            trace=[] if trace else None,
        )
        self._trace = self.result.trace
        self._done = [-1] * n  # last completed barrier per rank
        for r in range(n):
            self.engine.register(("nic", r), lambda msg, r=r: self.on_nic(r, msg))
            self.engine.register(("host", r), lambda msg, r=r: self.on_host(r, msg))

    # -- processors ---------------------------------------------------

    def nic_occupy(self, rank: int, cost: int) -> int:
        """Queue ``cost`` ns of work on a NIC processor; returns its finish time."""
        start = self.nic_free[rank]
        now = self.engine.now
        if start < now:
            start = now
        self.nic_free[rank] = finish = start + cost
        return finish

    def host_occupy(self, rank: int, cost: int) -> int:
        start = self.host_free[rank]
        now = self.engine.now
        if start < now:
            start = now
        self.host_free[rank] = finish = start + cost
        return finish

    def to_nic(self, rank: int, at: int, msg: tuple):
        return self.engine.schedule(at, ("nic", rank), msg)

    def to_host(self, rank: int, at: int, msg: tuple):
        return self.engine.schedule(at, ("host", rank), msg)

    # -- wire ---------------------------------------------------------

    def transmit(self, pkt: Packet, depart: int, action: str = "send") -> bool:
        """Put ``pkt`` on the wire at ``depart``; False if it was lost."""
        res = self.result
        res.sent[pkt.kind] += 1
        if action == "retransmit":
            res.retransmits += 1
        tr = self._trace
        if tr is not None:
            tr.append((depart, pkt.kind.value, pkt.src, pkt.dst, pkt.group, pkt.round, pkt.seq, action))
        lost = False
        if self.drop_rule is not None and self.drop_rule(pkt, action):
            lost = True
        elif should_drop(self.model, self._loss_rng[pkt.src]):
            lost = True
        if lost:
            res.dropped[pkt.kind] += 1
            if tr is not None:
                tr.append((depart, pkt.kind.value, pkt.src, pkt.dst, pkt.group, pkt.round, pkt.seq, "drop"))
            return False
        self.engine.schedule(depart + self.transit[pkt.src][pkt.dst], ("nic", pkt.dst), ("arrive", pkt))
        return True

    def trace_recv(self, pkt: Packet):
        if self._trace is not None:
            self._trace.append(
                (self.engine.now, pkt.kind.value, pkt.src, pkt.dst, pkt.group, pkt.round, pkt.seq, "recv")
            )

    # -- barrier driver -----------------------------------------------

    def run(self) -> RunResult:
        if self.iterations > 0:
            for r in range(self.n):
                self._schedule_entry(r, 0, 0)
        res = self.result
        res.end_time = self.engine.run_until_idle()
        res.events = self.engine.dispatched
        unfinished = [r for r in range(self.n) if self._done[r] != self.iterations - 1]
        if unfinished:
            raise ProtocolCorruption(f"{self.mode}: ranks {unfinished} never finished; engine went idle")
        return res

    def _schedule_entry(self, rank: int, k: int, after: int):
        at = after
        if self.host_skew:
            at += self._skew_rng[rank].uniform_ns(self.host_skew)
        self.to_host(rank, at, ("enter", k))

    def on_host(self, rank: int, msg: tuple):
        if msg[0] == "enter":
            k = msg[1]
            self.result.entries[k][rank] = self.engine.now
            self.enter_barrier(rank, k)
        else:
            self.host_message(rank, msg)

    def barrier_complete(self, rank: int, k: int):
        if self._done[rank] != k - 1:
            raise ProtocolCorruption(f"rank {rank} completed barrier {k} out of order")
        self._done[rank] = k
        now = self.engine.now
        self.result.completions[k][rank] = now
        if k + 1 < self.iterations:
            self._schedule_entry(rank, k + 1, now)

    # -- hooks --------------------------------------------------------

    def enter_barrier(self, rank: int, k: int):  # pragma: no cover - abstract
        raise NotImplementedError

    def on_nic(self, rank: int, msg: tuple):  # pragma: no cover - abstract
        raise NotImplementedError

    def host_message(self, rank: int, msg: tuple):
        raise ProtocolCorruption(f"unexpected host message {msg!r}")
