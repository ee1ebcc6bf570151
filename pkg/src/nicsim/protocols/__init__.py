"""Barrier protocol modes over the simulated NICs."""

from .base import BarrierSimulation, Kind, Packet, RunResult, count_packets
from .collective import CollectiveBarrier
from .elan import ElanChainBarrier, build_chain
from .pt2pt import HostBasedBarrier, NicPt2ptBarrier, Pt2ptSimulation

__all__ = [
    "BarrierSimulation",
    "CollectiveBarrier",
    "ElanChainBarrier",
    "HostBasedBarrier",
    "Kind",
    "NicPt2ptBarrier",
    "Packet",
    "Pt2ptSimulation",
    "RunResult",
    "build_chain",
    "count_packets",
]
