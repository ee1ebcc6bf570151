import pytest

from nicsim.engine import EventBudgetExceeded, ProtocolCorruption
from nicsim.protocols import HostBasedBarrier, Kind, NicPt2ptBarrier, Packet, Pt2ptSimulation, count_packets
from nicsim.protocols.pt2pt import RetryLimitExceeded, TokenState
from nicsim.schedules import DS, PE, GB, build_all
from nicsim.topology import Placement

from helpers import drop_first, run, toy_model


class Quiet(Pt2ptSimulation):
    """Point-to-point machinery with no barrier driver: tests post sends by hand."""

    def enter_barrier(self, rank, k):
        pass


def quiet(n=2, model=None, **kw):
    sim = Quiet(model or toy_model(), build_all(DS, n), Placement.identity(n), iterations=0, **kw)
    return sim


def test_single_send_reaches_receiver_after_component_sum():
    m = toy_model()
    sim = quiet()
    sim.post_send(0, 1, (0, 0, 1))
    sim.engine.run_until_idle()
    (t, rank, pkt), = sim.delivered
    transit = m.c_wire + m.c_hop
    assert rank == 1 and pkt.kind is Kind.DATA
    # posting cost and the NIC->host crossing are the host barrier's job;
    # here the NIC part alone
    assert t == m.c_queue_pass + m.c_pkt_alloc + m.c_nic_send + transit + m.c_nic_recv + m.c_record


def test_host_barrier_two_nodes_component_sum():
    m = toy_model()
    res = run(HostBasedBarrier, n=2, model=m)
    transit = m.c_wire + m.c_hop
    receive_event = (m.c_host_post + m.c_queue_pass + m.c_pkt_alloc + m.c_nic_send + transit
                     + m.c_nic_recv + m.c_record + m.c_nic_to_host_event)
    assert res.completions[0] == [receive_event + m.c_host_proc] * 2


def test_nic_pt2pt_two_nodes_skips_host_crossings():
    m = toy_model()
    host = run(HostBasedBarrier, n=2, model=m).completions[0][0]
    nic = run(NicPt2ptBarrier, n=2, model=m).completions[0][0]
    transit = m.c_wire + m.c_hop
    assert nic == (m.c_host_post + m.c_queue_pass + m.c_pkt_alloc + m.c_nic_send + transit
                   + m.c_nic_recv + m.c_record + m.c_nic_to_host_event)
    # only the endpoint differs at n=2: no host processing of the arrival
    assert host - nic == m.c_host_proc


def test_round_robin_order_from_trace():
    sim = quiet(n=4, trace=True)
    for dst in (1, 1, 2, 3):
        sim.post_send(0, dst, (0, 0, 1))
    sim.engine.run_until_idle()
    data = [row[3] for row in sim.result.sorted_trace() if row[1] == "DATA" and row[7] == "send"]
    assert data == [1, 2, 3, 1]


def test_pool_exhaustion_delays_transmission():
    m = toy_model()
    sim = quiet(n=3, model=m, pool_size=1, trace=True)
    sim.post_send(0, 1, (0, 0, 1))
    sim.post_send(0, 2, (0, 0, 1))
    sim.engine.run_until_idle()
    tr = sim.result.sorted_trace()
    sends = [row for row in tr if row[1] == "DATA" and row[7] == "send"]
    ack_back = [row for row in tr if row[1] == "ACK" and row[3] == 0 and row[7] == "recv"][0]
    # the second packet waits for the first one's ACK to free the only send packet
    assert sends[1][0] > ack_back[0]
    assert sim.nics[0].pool_free == 1
    with pytest.raises(ValueError):
        quiet(pool_size=0)


def test_pool_never_exceeds_capacity():
    sim = quiet(n=6, pool_size=2)
    seen = []
    orig = sim._inject

    def spy(rank, tok):
        orig(rank, tok)
        seen.append(sim.nics[rank].pool_capacity - sim.nics[rank].pool_free)

    sim._inject = spy
    for dst in range(1, 6):
        for _ in range(3):
            sim.post_send(0, dst, (0, 0, 1))
    sim.engine.run_until_idle()
    assert max(seen) <= 2
    assert len(sim.delivered) == 15


def test_in_order_delivery_and_ack():
    sim = quiet(trace=True)
    tok = sim.post_send(0, 1, (0, 0, 1))
    sim.engine.run_until_idle()
    assert tok.state is TokenState.DONE
    assert sim.nics[1].expected[0] == 1
    counts = count_packets(sim.result.sorted_trace())
    assert counts[("DATA", 0, 1)] == 1 and counts[("ACK", 1, 0)] == 1


def test_future_packet_dropped_without_state_change():
    sim = quiet()
    pkt = Packet(0, 1, Kind.DATA, 0, 0, 1, tseq=1)  # expecting 0
    sim.on_packet(1, pkt)
    sim.engine.run_until_idle()
    assert sim.nics[1].expected[0] == 0
    assert sim.delivered == []
    assert sim.result.sent[Kind.ACK] == 0


def test_duplicate_dropped_but_reacknowledged():
    sim = quiet()
    sim.nics[1].expected[0] = 3
    sim.on_packet(1, Packet(0, 1, Kind.DATA, 0, 0, 1, tseq=2))
    sim.engine.run_until_idle()
    assert sim.delivered == []
    assert sim.nics[1].expected[0] == 3
    assert sim.result.sent[Kind.ACK] == 1


@pytest.mark.parametrize("cls", [HostBasedBarrier, NicPt2ptBarrier])
def test_one_forced_drop_one_retransmission(cls):
    lossless = run(cls, n=2)
    res = run(cls, n=2, drop_rule=drop_first("DATA", src=0), trace=True)
    assert res.retransmits == 1
    assert res.dropped[Kind.DATA] == 1
    m = toy_model()
    # the loss costs roughly one sender timeout
    delay = res.completions[0][1] - lossless.completions[0][1]
    assert m.sender_timeout <= delay <= m.sender_timeout + 10_000


@pytest.mark.parametrize("cls", [HostBasedBarrier, NicPt2ptBarrier])
def test_lost_ack_recovered_by_duplicate(cls):
    res = run(cls, n=2, drop_rule=drop_first("ACK"), trace=True)
    assert res.retransmits == 1
    assert res.sent[Kind.ACK] == 3  # two first ACKs plus the re-ACK of the duplicate


@pytest.mark.parametrize("cls", [HostBasedBarrier, NicPt2ptBarrier])
def test_lossless_counts(cls):
    res = run(cls, n=8, trace=True, iterations=3)
    assert res.retransmits == 0
    assert res.sent[Kind.DATA] == 3 * 24 and res.sent[Kind.ACK] == 3 * 24
    assert res.sent[Kind.BARRIER] == 0


@pytest.mark.parametrize("cls", [HostBasedBarrier, NicPt2ptBarrier])
def test_single_rank_sends_nothing(cls):
    res = run(cls, n=1, iterations=3)
    assert sum(res.sent.values()) == 0


@pytest.mark.parametrize("alg", [DS, PE, GB])
def test_nic_mode_beats_host_mode(alg):
    for n in (2, 5, 8, 13):
        host = run(HostBasedBarrier, n=n, alg=alg, iterations=5).iteration_sums()
        nic = run(NicPt2ptBarrier, n=n, alg=alg, iterations=5).iteration_sums()
        assert sum(nic) < sum(host)


def test_retry_limit_enforced():
    m = toy_model(loss_prob=0.9)
    with pytest.raises(RetryLimitExceeded):
        run(NicPt2ptBarrier, n=2, model=m, retry_limit=1, seed=3)


def test_event_budget_propagates():
    with pytest.raises(EventBudgetExceeded):
        run(NicPt2ptBarrier, n=8, iterations=50, event_budget=200)


def test_lossy_runs_complete_and_stay_safe():
    m = toy_model(loss_prob=0.3)
    for cls in (HostBasedBarrier, NicPt2ptBarrier):
        res = run(cls, n=5, model=m, iterations=30, seed=9, host_skew=2000)
        for entries, comps in zip(res.entries, res.completions):
            assert min(comps) >= max(entries)
        assert res.retransmits >= res.dropped[Kind.DATA]


def test_acks_off_only_on_lossless_networks():
    with pytest.raises(ValueError):
        NicPt2ptBarrier(toy_model(loss_prob=0.1), build_all(DS, 2), acks=False)
    res = run(NicPt2ptBarrier, n=8, acks=False)
    assert res.sent[Kind.ACK] == 0 and res.sent[Kind.DATA] == 24


def test_incomplete_run_is_corruption():
    class Broken(NicPt2ptBarrier):
        def deliver(self, rank, pkt):
            pass  # swallow arrivals: nobody ever finishes

    with pytest.raises(ProtocolCorruption):
        run(Broken, n=2)
