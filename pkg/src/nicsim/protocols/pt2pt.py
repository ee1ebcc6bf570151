"""MCP-like point-to-point messaging at the NIC and the two barrier modes
layered on it.

Sending: a posted descriptor becomes a :class:`SendToken` on the queue for
its destination.  The NIC serves destination queues round-robin, paying
``c_queue_pass`` for every queue it inspects, claims a send packet from a
bounded pool (``c_pkt_alloc``) and injects it (``c_nic_send``).  Each
packet gets a :class:`SendRecord`; the packet stays claimed until its ACK
returns, and an unacknowledged record is retransmitted after
``sender_timeout``.

Receiving: DATA carrying the expected per-source sequence number is
accepted (``c_nic_recv + c_record``) and acknowledged from the per-peer
static ACK packet.  Packets from the future are dropped without a trace of
state change; duplicates are dropped but re-acknowledged, otherwise a lost
ACK would leave the sender retransmitting forever.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from ..engine import EventHandle, SimulationError
from .base import HEADER_BYTES, INT_BYTES, BarrierSimulation, Kind, Packet

DEFAULT_POOL_SIZE = 4
DEFAULT_RETRY_LIMIT = 100


class RetryLimitExceeded(SimulationError):
    pass


class TokenState(enum.Enum):
    QUEUED = "queued"
    SENDING = "sending"
    AWAITING_ACKS = "awaiting-acks"
    DONE = "done"


@dataclass(slots=True)
class SendToken:
    dst: int
    length: int
    payload: tuple  # (group, round, barrier seq)
    state: TokenState = TokenState.QUEUED


@dataclass(slots=True)
class SendRecord:
    dst: int
    seq: int
    sent_at: int
    token: SendToken
    retries: int = 0
    timer: EventHandle | None = None


@dataclass
class NicPt2ptState:
    rank: int
    ring: list[int]
    queues: dict[int, deque] = field(default_factory=dict)
    cursor: int = 0
    pool_capacity: int = DEFAULT_POOL_SIZE
    pool_free: int = DEFAULT_POOL_SIZE
    sending: bool = False
    next_seq: dict[int, int] = field(default_factory=dict)
    expected: dict[int, int] = field(default_factory=dict)
    records: dict[tuple[int, int], SendRecord] = field(default_factory=dict)
    queue_passes: int = 0

    @classmethod
    def create(cls, rank: int, n: int, pool_size: int) -> "NicPt2ptState":
        ring = [p for p in range(n) if p != rank]
        return cls(
            rank=rank,
            ring=ring,
            queues={p: deque() for p in ring},
            pool_capacity=pool_size,
            pool_free=pool_size,
            next_seq={p: 0 for p in ring},
            expected={p: 0 for p in ring},
        )

    def pick_queue(self) -> tuple[int, int] | None:
        """Round-robin scan from the cursor: (destination, queues inspected)."""
        ring = self.ring
        size = len(ring)
        for i in range(size):
            idx = (self.cursor + i) % size
            if self.queues[ring[idx]]:
                self.cursor = (idx + 1) % size
                return ring[idx], i + 1
        return None


class Pt2ptSimulation(BarrierSimulation):
    """Point-to-point NIC machinery; delivered DATA goes to :meth:`deliver`."""

    mode = "pt2pt"

    def __init__(self, *args, pool_size: int = DEFAULT_POOL_SIZE, retry_limit: int | None = DEFAULT_RETRY_LIMIT,
                 acks: bool = True, **kwargs):
        super().__init__(*args, **kwargs)
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self.retry_limit = retry_limit
        self.acks = acks
        if not acks and self.model.loss_prob > 0:
            raise ValueError("disabling ACKs is only meaningful on a lossless network")
        self.nics = [NicPt2ptState.create(r, self.n, pool_size) for r in range(self.n)]
        self.delivered: list[tuple[int, int, Packet]] = []

    # -- sending ------------------------------------------------------

    def post_send(self, rank: int, dst: int, payload: tuple, length: int = INT_BYTES) -> SendToken:
        """Append a send token for ``dst`` and let the NIC schedule it."""
        if dst == rank or not 0 <= dst < self.n:
            raise ValueError(f"bad destination {dst} for rank {rank}")
        if length < 0:
            raise ValueError("length must be >= 0")
        tok = SendToken(dst, length, payload)
        self.nics[rank].queues[dst].append(tok)
        self._kick(rank)
        return tok

    def _kick(self, rank: int):
        nic = self.nics[rank]
        if nic.sending or nic.pool_free == 0:
            return
        pick = nic.pick_queue()
        if pick is None:
            return
        dst, inspected = pick
        tok = nic.queues[dst].popleft()
        tok.state = TokenState.SENDING
        nic.queue_passes += inspected
        nic.pool_free -= 1
        nic.sending = True
        m = self.model
        finish = self.nic_occupy(rank, inspected * m.c_queue_pass + m.c_pkt_alloc + m.c_nic_send)
        self.to_nic(rank, finish, ("inject", tok))

    def _inject(self, rank: int, tok: SendToken):
        nic = self.nics[rank]
        now = self.engine.now
        seq = nic.next_seq[tok.dst]
        nic.next_seq[tok.dst] = seq + 1
        group, rnd, bseq = tok.payload
        pkt = Packet(rank, tok.dst, Kind.DATA, group, rnd, bseq, HEADER_BYTES + tok.length, seq)
        if self.acks:
            rec = SendRecord(tok.dst, seq, now, tok)
            rec.timer = self.to_nic(rank, now + self.model.sender_timeout, ("timeout", rec))
            nic.records[(tok.dst, seq)] = rec
            tok.state = TokenState.AWAITING_ACKS
        else:
            tok.state = TokenState.DONE
            nic.pool_free += 1
        self.transmit(pkt, now)
        nic.sending = False
        self._kick(rank)

    def _timeout(self, rank: int, rec: SendRecord):
        nic = self.nics[rank]
        if nic.records.get((rec.dst, rec.seq)) is not rec:
            return
        rec.retries += 1
        if self.retry_limit is not None and rec.retries > self.retry_limit:
            raise RetryLimitExceeded(
                f"rank {rank}: packet seq {rec.seq} to {rec.dst} unacknowledged after {self.retry_limit} retries"
            )
        if rec.retries > self.result.max_retries:
            self.result.max_retries = rec.retries
        finish = self.nic_occupy(rank, self.model.c_nic_send)
        rec.timer = None
        self.to_nic(rank, finish, ("resend", rec))

    def _resend(self, rank: int, rec: SendRecord):
        nic = self.nics[rank]
        if nic.records.get((rec.dst, rec.seq)) is not rec:
            return  # acknowledged while queued for retransmission
        now = self.engine.now
        group, rnd, bseq = rec.token.payload
        pkt = Packet(rank, rec.dst, Kind.DATA, group, rnd, bseq, HEADER_BYTES + rec.token.length, rec.seq)
        rec.sent_at = now
        rec.timer = self.to_nic(rank, now + self.model.sender_timeout, ("timeout", rec))
        self.transmit(pkt, now, "retransmit")

    # -- receiving ----------------------------------------------------

    def on_nic(self, rank: int, msg: tuple):
        tag = msg[0]
        if tag == "arrive":
            pkt = msg[1]
            self.trace_recv(pkt)
            finish = self.nic_occupy(rank, self.model.c_nic_recv)
            self.to_nic(rank, finish, ("classified", pkt))
        elif tag == "classified":
            self.on_packet(rank, msg[1])
        elif tag == "inject":
            self._inject(rank, msg[1])
        elif tag == "timeout":
            self._timeout(rank, msg[1])
        elif tag == "resend":
            self._resend(rank, msg[1])
        elif tag == "deliver":
            self.deliver(rank, msg[1])
        elif tag == "ack_out":
            self.transmit(msg[1], self.engine.now)
        else:
            self.nic_message(rank, msg)

    def on_packet(self, rank: int, pkt: Packet):
        """A classified packet: accept, drop, or consume an ACK."""
        nic = self.nics[rank]
        if pkt.kind is Kind.ACK:
            rec = nic.records.pop((pkt.src, pkt.tseq), None)
            if rec is None:
                return  # stale ACK for a retransmitted packet
            if rec.timer is not None:
                self.engine.cancel(rec.timer)
            rec.token.state = TokenState.DONE
            nic.pool_free += 1
            self._kick(rank)
            return
        if pkt.kind is not Kind.DATA:
            self.nic_packet(rank, pkt)
            return
        expected = nic.expected[pkt.src]
        if pkt.tseq > expected:
            return  # unexpected: dropped immediately
        if pkt.tseq < expected:
            if self.acks:
                self._ack(rank, pkt)
            return
        nic.expected[pkt.src] = expected + 1
        done = self.nic_occupy(rank, self.model.c_record)
        self.to_nic(rank, done, ("deliver", pkt))
        if self.acks:
            self._ack(rank, pkt)

    def _ack(self, rank: int, pkt: Packet):
        ack = Packet(rank, pkt.src, Kind.ACK, pkt.group, pkt.round, pkt.seq, HEADER_BYTES, pkt.tseq)
        finish = self.nic_occupy(rank, self.model.c_nic_send)
        self.to_nic(rank, finish, ("ack_out", ack))

    # -- hooks --------------------------------------------------------

    def deliver(self, rank: int, pkt: Packet):
        self.delivered.append((self.engine.now, rank, pkt))

    def nic_message(self, rank: int, msg: tuple):
        raise ValueError(f"unknown NIC message {msg[0]!r}")

    def nic_packet(self, rank: int, pkt: Packet):
        raise ValueError(f"unexpected {pkt.kind} packet in point-to-point mode")


class _RoundTracker:
    """Progress through one rank's schedule across consecutive barriers."""

    __slots__ = ("k", "pos", "active", "arrivals")

    def __init__(self):
        self.k = -1
        self.pos = 0
        self.active = False
        self.arrivals: dict[int, set] = {}

    def start(self, k: int):
        self.k = k
        self.pos = 0
        self.active = True
        self.arrivals.setdefault(k, set())

    def note(self, k: int, rnd: int, src: int):
        self.arrivals.setdefault(k, set()).add((rnd, src))

    def ready(self, schedule, rnd: int) -> bool:
        got = self.arrivals[self.k]
        return all((rnd, f) in got for f in schedule.rounds[rnd].await_from)

    def finish(self):
        self.active = False
        self.arrivals.pop(self.k, None)


class HostBasedBarrier(Pt2ptSimulation):
    """Every round is driven by the host: a message crosses NIC -> host
    (``c_nic_to_host_event + c_host_proc``) before the next round's sends
    are posted (``c_host_post`` each)."""

    mode = "host"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.progress = [_RoundTracker() for _ in range(self.n)]

    def enter_barrier(self, rank, k):
        self.progress[rank].start(k)
        self._advance(rank)

    def _advance(self, rank):
        st = self.progress[rank]
        sched = self.schedules[rank]
        nrounds = len(sched.rounds)
        while st.active:
            if st.pos > 0 and not st.ready(sched, st.pos - 1):
                return
            if st.pos == nrounds:
                k = st.k
                st.finish()
                self.barrier_complete(rank, k)
                return
            for dst in sched.rounds[st.pos].send_to:
                at = self.host_occupy(rank, self.model.c_host_post)
                self.to_nic(rank, at, ("post", dst, (0, st.pos, st.k + 1)))
            st.pos += 1

    def nic_message(self, rank, msg):
        if msg[0] == "post":
            self.post_send(rank, msg[1], msg[2])
        else:
            super().nic_message(rank, msg)

    def deliver(self, rank, pkt):
        self.to_host(rank, self.engine.now + self.model.c_nic_to_host_event, ("recv", pkt))

    def host_message(self, rank, msg):
        tag = msg[0]
        if tag == "recv":
            at = self.host_occupy(rank, self.model.c_host_proc)
            self.to_host(rank, at, ("processed", msg[1]))
        elif tag == "processed":
            pkt = msg[1]
            st = self.progress[rank]
            st.note(pkt.seq - 1, pkt.round, pkt.src)
            if st.active and pkt.seq - 1 == st.k:
                self._advance(rank)
        else:
            super().host_message(rank, msg)


class NicPt2ptBarrier(Pt2ptSimulation):
    """Prior-work NIC barrier: arrivals trigger the next round at the NIC,
    but every barrier message is an ordinary point-to-point send (token
    queuing, packet claim, send record, ACK).  The host only posts the
    barrier and hears of its completion."""

    mode = "nic-pt2pt"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.progress = [_RoundTracker() for _ in range(self.n)]

    def enter_barrier(self, rank, k):
        at = self.host_occupy(rank, self.model.c_host_post)
        self.to_nic(rank, at, ("barrier", k))

    def nic_message(self, rank, msg):
        if msg[0] == "barrier":
            self.progress[rank].start(msg[1])
            self._advance(rank)
        else:
            super().nic_message(rank, msg)

    def _advance(self, rank):
        st = self.progress[rank]
        sched = self.schedules[rank]
        nrounds = len(sched.rounds)
        while st.active:
            if st.pos > 0 and not st.ready(sched, st.pos - 1):
                return
            if st.pos == nrounds:
                k = st.k
                st.finish()
                self.to_host(rank, self.engine.now + self.model.c_nic_to_host_event, ("done", k))
                return
            for dst in sched.rounds[st.pos].send_to:
                self.post_send(rank, dst, (0, st.pos, st.k + 1))
            st.pos += 1

    def deliver(self, rank, pkt):
        st = self.progress[rank]
        st.note(pkt.seq - 1, pkt.round, pkt.src)
        if st.active and pkt.seq - 1 == st.k:
            self._advance(rank)

    def host_message(self, rank, msg):
        if msg[0] == "done":
            self.barrier_complete(rank, msg[1])
        else:
            super().host_message(rank, msg)
