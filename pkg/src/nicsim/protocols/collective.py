"""NIC-resident collective protocol for barriers.

Each process group owns a dedicated queue holding a single token per
barrier, and a static send packet whose only payload is the barrier
sequence number.  One :class:`CollectiveRecord` (a bit vector over all
expected arrivals) replaces per-packet send records, and there are no
ACKs: a receiver whose expected messages are overdue NACKs the sender,
which regenerates the message from the sequence number alone.

Consecutive barriers on a group can overlap by at most one: a peer can be
one barrier ahead, never two, so a single look-ahead slot holds early
arrivals and anything further ahead is protocol corruption.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..engine import EventHandle, ProtocolCorruption
from ..schedules import Round, Schedule
from .base import HEADER_BYTES, INT_BYTES, BarrierSimulation, Kind, Packet

BARRIER_BYTES = HEADER_BYTES + INT_BYTES
MAX_NACK_BACKOFF = 4  # NACK interval grows to at most 16x receiver_timeout


@dataclass
class CollectiveRecord:
    group: int
    seq: int
    started_at: int
    bits: int = 0
    nack_timer: EventHandle | None = None


@dataclass
class BarrierGroup:
    """One rank's view of a registered group; ranks here are global."""

    group_id: int
    members: tuple[int, ...]
    me: int
    schedule: Schedule
    bit_index: dict[tuple[int, int], int]
    round_masks: list[int]
    full_mask: int
    current_seq: int = 0
    in_progress: bool = False
    pos: int = 0  # next round whose sends have not been issued
    round_since: int = 0  # when the awaited round became the one blocking progress
    nack_rounds: int = 0  # NACK bursts already sent for the blocking round
    record: CollectiveRecord | None = None
    ahead_bits: int = 0

    @classmethod
    def create(cls, group_id: int, members: tuple[int, ...], local_schedule: Schedule) -> "BarrierGroup":
        schedule = to_global(members, local_schedule)
        bit_index: dict[tuple[int, int], int] = {}
        masks = []
        for r, rnd in enumerate(schedule.rounds):
            mask = 0
            for f in rnd.await_from:
                bit = len(bit_index)
                bit_index[(r, f)] = bit
                mask |= 1 << bit
            masks.append(mask)
        return cls(group_id, members, schedule.me, schedule, bit_index, masks, (1 << len(bit_index)) - 1)


def to_global(members, local: Schedule) -> Schedule:
    rounds = tuple(
        Round(tuple(members[t] for t in r.send_to), tuple(members[f] for f in r.await_from))
        for r in local.rounds
    )
    return Schedule(len(members), members[local.me], rounds)


class CollectiveBarrier(BarrierSimulation):
    """Barrier over the dedicated collective protocol.

    Group 0 spans every rank and is the one the consecutive-barrier driver
    runs; further groups can be added with :meth:`register_group` and
    driven by :meth:`initiate_barrier`.
    """

    mode = "nic-collective"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.groups: list[dict[int, BarrierGroup]] = [{} for _ in range(self.n)]
        self._member_sets: dict[frozenset, int] = {}
        self.group_completions: dict[int, list[tuple[int, int, int]]] = {}
        self.nacks_sent = 0
        self.main_group = self.register_group(tuple(range(self.n)), self.schedules)

    # -- setup ----------------------------------------------------------

    def register_group(self, members, schedules: list[Schedule]) -> int:
        """Allocate a dedicated queue and static packet on each member NIC."""
        members = tuple(members)
        if len(set(members)) != len(members):
            raise ValueError(f"duplicate rank in group members {members}")
        key = frozenset(members)
        if key in self._member_sets:
            raise ValueError(f"group with members {sorted(members)} already registered")
        if len(schedules) != len(members):
            raise ValueError("need one schedule per member")
        gid = len(self._member_sets)
        self._member_sets[key] = gid
        for local in schedules:
            g = BarrierGroup.create(gid, members, local)
            self.groups[g.me][gid] = g
        self.group_completions[gid] = []
        return gid

    # -- host side ------------------------------------------------------

    def enter_barrier(self, rank, k):
        self.initiate_barrier(rank, self.main_group)

    def initiate_barrier(self, rank: int, group_id: int):
        at = self.host_occupy(rank, self.model.c_host_post)
        self.to_nic(rank, at, ("initiate", group_id))

    def host_message(self, rank, msg):
        if msg[0] == "done":
            _, gid, seq = msg
            self.group_completions[gid].append((rank, seq, self.engine.now))
            if gid == self.main_group:
                self.barrier_complete(rank, seq - 1)
        else:
            super().host_message(rank, msg)

    # -- NIC side -------------------------------------------------------

    def on_nic(self, rank, msg):
        tag = msg[0]
        if tag == "arrive":
            pkt = msg[1]
            self.trace_recv(pkt)
            finish = self.nic_occupy(rank, self.model.c_nic_recv)
            self.to_nic(rank, finish, ("received", pkt))
        elif tag == "received":
            pkt = msg[1]
            if pkt.kind is Kind.BARRIER:
                self.on_barrier_packet(rank, pkt)
            elif pkt.kind is Kind.NACK:
                self.on_nack(rank, pkt)
            else:
                raise ProtocolCorruption(f"unexpected {pkt.kind} packet on the collective path")
        elif tag == "initiate":
            self._initiate(rank, msg[1])
        elif tag == "rto":
            self.on_receiver_timeout(rank, msg[1], msg[2])
        elif tag == "out":
            self.transmit(msg[1], self.engine.now, msg[2])
        else:
            raise ValueError(f"unknown NIC message {tag!r}")

    def _send(self, rank: int, pkt: Packet, action: str = "send"):
        finish = self.nic_occupy(rank, self.model.c_nic_send)
        self.to_nic(rank, finish, ("out", pkt, action))

    def _initiate(self, rank: int, gid: int):
        g = self.groups[rank][gid]
        if g.in_progress:
            raise ProtocolCorruption(f"rank {rank}: barrier re-initiated on group {gid} while in progress")
        now = self.engine.now
        g.current_seq += 1
        g.in_progress = True
        g.pos = 0
        g.round_since = now
        g.nack_rounds = 0
        # the group's single token sits at the front of its own queue
        self.nic_occupy(rank, self.model.c_queue_pass + self.model.c_record)
        g.record = CollectiveRecord(gid, g.current_seq, now, bits=g.ahead_bits)
        g.ahead_bits = 0
        if g.schedule.rounds:
            g.record.nack_timer = self.to_nic(
                rank, now + self.model.receiver_timeout, ("rto", gid, g.current_seq)
            )
        self._advance(rank, g)

    def _advance(self, rank: int, g: BarrierGroup):
        rounds = g.schedule.rounds
        rec = g.record
        while g.in_progress:
            if g.pos > 0:
                mask = g.round_masks[g.pos - 1]
                if rec.bits & mask != mask:
                    return
            if g.pos == len(rounds):
                self._complete(rank, g)
                return
            for dst in rounds[g.pos].send_to:
                self._send(rank, Packet(rank, dst, Kind.BARRIER, g.group_id, g.pos, g.current_seq, BARRIER_BYTES))
            g.pos += 1
            g.round_since = self.engine.now
            g.nack_rounds = 0

    def _complete(self, rank: int, g: BarrierGroup):
        g.in_progress = False
        if g.record.nack_timer is not None:
            self.engine.cancel(g.record.nack_timer)
        at = self.nic_occupy(rank, 0) + self.model.c_nic_to_host_event  # after queued NIC work
        self.to_host(rank, at, ("done", g.group_id, g.current_seq))

    def on_barrier_packet(self, rank: int, pkt: Packet):
        g = self.groups[rank][pkt.group]
        cur = g.current_seq
        if pkt.seq > cur + 1:
            self.result.lookahead_violations += 1
            raise ProtocolCorruption(
                f"rank {rank}: BARRIER seq {pkt.seq} from {pkt.src} while local seq is {cur}"
            )
        bit = g.bit_index.get((pkt.round, pkt.src))
        if bit is None:
            raise ProtocolCorruption(f"rank {rank}: unexpected BARRIER round {pkt.round} from {pkt.src}")
        if pkt.seq == cur + 1:
            g.ahead_bits |= 1 << bit
            return
        if pkt.seq < cur or not g.in_progress:
            return  # late duplicate of a finished barrier
        rec = g.record
        if rec.bits >> bit & 1:
            return
        rec.bits |= 1 << bit
        self._advance(rank, g)

    def on_receiver_timeout(self, rank: int, gid: int, seq: int):
        g = self.groups[rank][gid]
        if not g.in_progress or g.current_seq != seq:
            return
        now = self.engine.now
        rto = self.model.receiver_timeout
        rec = g.record
        waiting = g.pos - 1
        overdue_at = g.round_since + rto
        if now >= overdue_at:
            mask = g.round_masks[waiting]
            for f in g.schedule.rounds[waiting].await_from:
                if not rec.bits >> g.bit_index[(waiting, f)] & 1:
                    self.nacks_sent += 1
                    self._send(rank, Packet(rank, f, Kind.NACK, gid, waiting, seq, BARRIER_BYTES))
            assert rec.bits & mask != mask
            # back off so NACKs cannot outpace a congested sender
            g.nack_rounds += 1
            nxt = now + (rto << min(g.nack_rounds, MAX_NACK_BACKOFF))
        else:
            nxt = overdue_at
        rec.nack_timer = self.to_nic(rank, nxt, ("rto", gid, seq))

    def on_nack(self, rank: int, pkt: Packet):
        g = self.groups[rank][pkt.group]
        cur = g.current_seq
        if pkt.seq > cur + 1:
            raise ProtocolCorruption(f"rank {rank}: NACK for seq {pkt.seq} while local seq is {cur}")
        if pkt.seq == cur + 1:
            return  # this rank has not entered that barrier yet
        if pkt.seq == cur and g.in_progress and pkt.round >= g.pos:
            return  # not sent yet; it goes out when its round is reached
        if pkt.src not in g.schedule.rounds[pkt.round].send_to:
            raise ProtocolCorruption(f"rank {rank}: NACK from {pkt.src} for round {pkt.round} it is not owed")
        self._send(rank, Packet(rank, pkt.src, Kind.BARRIER, g.group_id, pkt.round, pkt.seq, BARRIER_BYTES),
                   "retransmit")
