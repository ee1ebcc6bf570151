from nicsim.engine import us
from nicsim.schedules import DS, build_all
from nicsim.topology import CostModel, Placement


def toy_model(**changes) -> CostModel:
    """Small distinct constants so component sums are easy to tell apart."""
    base = dict(
        c_host_proc=us(3.0),
        c_host_post=us(0.7),
        c_nic_to_host_event=us(1.1),
        c_queue_pass=us(0.3),
        c_pkt_alloc=us(0.5),
        c_nic_send=us(1.3),
        c_nic_recv=us(1.7),
        c_record=us(0.4),
        c_wire=us(0.5),
        c_hop=us(0.1),
    )
    base.update(changes)
    return CostModel("toy", **base)


def run(cls, n=2, alg=DS, model=None, **kw):
    model = model or toy_model()
    return cls(model, build_all(alg, n), Placement.identity(n), **kw).run()


def drop_first(kind, src=None, dst=None, count=1, action="send"):
    """Drop rule that loses the first ``count`` matching transmissions."""
    state = {"left": count}

    def rule(pkt, act):
        if state["left"] and pkt.kind.value == kind and act == action:
            if (src is None or pkt.src == src) and (dst is None or pkt.dst == dst):
                state["left"] -= 1
                return True
        return False

    return rule
