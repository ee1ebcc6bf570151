"""Barrier as a chain of zero-byte RDMA descriptors on a reliable network.

The host triggers the first descriptor; every later one is fired by an
event that counts remote RDMA arrivals.  A descriptor step also waits for
the previous step of the chain, so an early arrival for a later round can
never release that round's sends ahead of time.  Consecutive barriers
alternate between two event sets (barrier parity).
"""

from __future__ import annotations

from dataclasses import dataclass

from ..engine import ProtocolCorruption
from ..schedules import Schedule
from ..topology import CostModel
from .base import HEADER_BYTES, BarrierSimulation, Kind, Packet

HOST_TRIGGER = "host"


class ElanConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RdmaDescriptor:
    target: int
    round: int
    fires_remote_event: int  # identifier of the event it bumps at the target
    trigger: str | int  # HOST_TRIGGER, or the local event identifier it waits on
    wait_count: int = 0


@dataclass
class ElanEvent:
    identifier: int
    required_count: int
    current_count: int = 0
    fired: int = 0

    def bump(self) -> bool:
        """Count one arrival; True when this arrival fires the event."""
        self.current_count += 1
        if self.current_count > self.required_count:
            raise ProtocolCorruption(f"event {self.identifier} bumped past its count {self.required_count}")
        if self.current_count == self.required_count:
            self.fired += 1
            return True
        return False

    @property
    def done(self) -> bool:
        return self.current_count >= self.required_count

    def reset(self):
        self.current_count = 0


@dataclass
class Chain:
    """Per-rank descriptor chain; events are identified by the round they count."""

    rank: int
    schedule: Schedule
    descriptors: list[RdmaDescriptor]
    events: dict[int, int]  # round -> required count (rounds with awaits only)
    final_round: int  # event whose firing signals local completion; -1 if none

    def steps(self) -> list[list[RdmaDescriptor]]:
        out: list[list[RdmaDescriptor]] = [[] for _ in self.schedule.rounds]
        for d in self.descriptors:
            out[d.round].append(d)
        return out


def build_chain(schedule: Schedule) -> Chain:
    """Round ``r``'s sends wait on the event of the nearest earlier round
    that awaits anything; sends before any await are host-initiated."""
    descriptors = []
    gate: int | None = None
    for r, rnd in enumerate(schedule.rounds):
        for t in rnd.send_to:
            if gate is None:
                descriptors.append(RdmaDescriptor(t, r, r, HOST_TRIGGER, 0))
            else:
                descriptors.append(RdmaDescriptor(t, r, r, gate, len(schedule.rounds[gate].await_from)))
        if rnd.await_from:
            gate = r
    events = {r: len(rnd.await_from) for r, rnd in enumerate(schedule.rounds) if rnd.await_from}
    final = max(events) if events else -1
    return Chain(schedule.me, schedule, descriptors, events, final)


class ElanChainBarrier(BarrierSimulation):
    mode = "elan-chain"

    def __init__(self, model: CostModel, schedules, *args, **kwargs):
        if not model.reliable_network:
            raise ElanConfigError(f"{model.platform_name} is not a reliable network; the RDMA chain needs one")
        if model.loss_prob > 0 or kwargs.get("drop_rule") is not None:
            raise ElanConfigError("loss injection is not supported on the reliable RDMA backend")
        super().__init__(model, schedules, *args, **kwargs)
        self.chains = [build_chain(s) for s in self.schedules]
        self._steps = [c.steps() for c in self.chains]
        # two event sets per rank, selected by barrier parity
        self.event_sets = [
            [{r: ElanEvent(r, cnt) for r, cnt in c.events.items()} for _ in range(2)] for c in self.chains
        ]
        self.current = [0] * self.n  # barrier sequence, 1-based
        self.active = [False] * self.n
        self.pos = [0] * self.n

    def enter_barrier(self, rank, k):
        at = self.host_occupy(rank, self.model.c_host_post)
        self.to_nic(rank, at, ("trigger",))

    def on_nic(self, rank, msg):
        tag = msg[0]
        if tag == "arrive":
            pkt = msg[1]
            self.trace_recv(pkt)
            finish = self.nic_occupy(rank, self.model.c_nic_recv)
            self.to_nic(rank, finish, ("event", pkt))
        elif tag == "event":
            self._remote_event(rank, msg[1])
        elif tag == "trigger":
            self.trigger_barrier(rank)
        elif tag == "out":
            self.transmit(msg[1], self.engine.now)
        else:
            raise ValueError(f"unknown NIC message {tag!r}")

    def trigger_barrier(self, rank: int):
        if self.active[rank]:
            raise ProtocolCorruption(f"rank {rank}: chain triggered while a barrier is in progress")
        self.current[rank] += 1
        self.active[rank] = True
        self.pos[rank] = 0
        self._advance(rank)

    def _events(self, rank):
        return self.event_sets[rank][self.current[rank] & 1]

    def _advance(self, rank):
        steps = self._steps[rank]
        events = self._events(rank)
        nrounds = len(steps)
        seq = self.current[rank]
        while self.active[rank]:
            p = self.pos[rank]
            if p > 0:
                ev = events.get(p - 1)
                if ev is not None and not ev.done:
                    return
            if p == nrounds:
                for ev in events.values():
                    ev.reset()
                self.active[rank] = False
                self.to_host(rank, self.engine.now + self.model.c_nic_to_host_event, ("done", seq))
                return
            for d in steps[p]:
                finish = self.nic_occupy(rank, self.model.c_nic_send)
                pkt = Packet(rank, d.target, Kind.RDMA, 0, d.round, seq, HEADER_BYTES)
                self.to_nic(rank, finish, ("out", pkt))
            self.pos[rank] = p + 1

    def _remote_event(self, rank, pkt: Packet):
        cur = self.current[rank]
        if pkt.seq > cur + 1 or pkt.seq < cur:
            self.result.lookahead_violations += pkt.seq > cur + 1
            raise ProtocolCorruption(f"rank {rank}: RDMA for barrier {pkt.seq} while at {cur}")
        if pkt.seq == cur and not self.active[rank]:
            raise ProtocolCorruption(f"rank {rank}: RDMA for finished barrier {pkt.seq}")
        ev = self.event_sets[rank][pkt.seq & 1].get(pkt.round)
        if ev is None:
            raise ProtocolCorruption(f"rank {rank}: RDMA for round {pkt.round} that awaits nothing")
        fired = ev.bump()
        if fired and pkt.seq == cur and self.active[rank]:
            self._advance(rank)

    def host_message(self, rank, msg):
        if msg[0] == "done":
            self.barrier_complete(rank, msg[1] - 1)
        else:
            super().host_message(rank, msg)
