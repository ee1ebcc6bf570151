"""Measurement methodology on top of the simulator.

One experiment = one placement (shuffled once from the seed), ``warmup``
discarded barriers, then ``iterations`` measured consecutive barriers.
Per-iteration latency is the mean over ranks of each rank's loop time,
so it matches what a timing loop around the barrier call reports.
"""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import DEFAULT_EVENT_BUDGET, Rng, us
from .protocols import (
    CollectiveBarrier,
    ElanChainBarrier,
    HostBasedBarrier,
    Kind,
    NicPt2ptBarrier,
    RunResult,
)
from .protocols.base import TRACE_COLUMNS
from .schedules import DS, AlgorithmKind, build_all
from .topology import ConfigError, CostModel, get_preset, permute_placement

MODES = ("host", "nic-pt2pt", "nic-collective", "elan-chain")
MODE_CLASSES = {
    "host": HostBasedBarrier,
    "nic-pt2pt": NicPt2ptBarrier,
    "nic-collective": CollectiveBarrier,
    "elan-chain": ElanChainBarrier,
}

CSV_COLUMNS = (
    "platform", "mode", "algorithm", "n", "seed",
    "mean_us", "p50_us", "p99_us", "min_us", "max_us",
    "pkts_barrier", "pkts_data", "pkts_ack", "pkts_nack", "retransmits",
)


@dataclass(frozen=True)
class ExperimentConfig:
    platform: str
    mode: str = "nic-collective"
    algorithm: AlgorithmKind = DS
    n: int = 8
    warmup: int = 100
    iterations: int = 10_000
    seed: int = 0
    loss_prob: float | None = None  # None keeps the preset's value
    host_skew: float = 0.0  # µs, max random delay before each barrier entry
    event_budget: int = DEFAULT_EVENT_BUDGET

    def __post_init__(self):
        if isinstance(self.algorithm, str):
            object.__setattr__(self, "algorithm", AlgorithmKind.parse(self.algorithm))
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.host_skew < 0:
            raise ConfigError(f"host_skew must be >= 0, got {self.host_skew}")
        if self.event_budget < 1:
            raise ConfigError(f"event_budget must be >= 1, got {self.event_budget}")
        model = self.cost_model()  # resolves the preset and checks loss vs reliability
        if self.mode == "elan-chain" and not model.reliable_network:
            raise ConfigError(f"elan-chain mode needs a reliable network; {self.platform} is not one")

    def cost_model(self) -> CostModel:
        model = get_preset(self.platform)
        if self.loss_prob is not None:
            if model.reliable_network and self.loss_prob > 0:
                raise ConfigError(f"loss_prob={self.loss_prob} on {self.platform}, which is a reliable network")
            model = model.replace(loss_prob=self.loss_prob)
        return model

    @property
    def key(self) -> tuple:
        return (self.platform, self.mode, self.algorithm.label, self.n)


@dataclass
class Measurement:
    config: ExperimentConfig
    mean_us: float
    min_us: float
    max_us: float
    p50_us: float
    p99_us: float
    packets: dict[str, int]  # by packet kind, whole run including warm-up
    retransmits: int
    barriers: int  # barriers simulated, warm-up included
    series_us: list[float] | None = None
    trace: list[tuple] | None = None
    lookahead_violations: int = 0
    events: int = 0

    def csv_row(self) -> dict:
        c = self.config
        p = self.packets
        return {
            "platform": c.platform,
            "mode": c.mode,
            "algorithm": c.algorithm.label,
            "n": c.n,
            "seed": c.seed,
            "mean_us": f"{self.mean_us:.3f}",
            "p50_us": f"{self.p50_us:.3f}",
            "p99_us": f"{self.p99_us:.3f}",
            "min_us": f"{self.min_us:.3f}",
            "max_us": f"{self.max_us:.3f}",
            # RDMA writes are the chain's barrier messages
            "pkts_barrier": p.get("BARRIER", 0) + p.get("RDMA", 0),
            "pkts_data": p.get("DATA", 0),
            "pkts_ack": p.get("ACK", 0),
            "pkts_nack": p.get("NACK", 0),
            "retransmits": self.retransmits,
        }


def simulate(cfg: ExperimentConfig, *, trace: bool = False, **sim_kwargs) -> RunResult:
    """Run the raw simulation behind ``cfg``; warm-up barriers included."""
    model = cfg.cost_model()
    placement = permute_placement(cfg.n, Rng(cfg.seed, "placement"))
    sim = MODE_CLASSES[cfg.mode](
        model,
        build_all(cfg.algorithm, cfg.n),
        placement,
        iterations=cfg.warmup + cfg.iterations,
        seed=cfg.seed,
        host_skew=us(cfg.host_skew),
        trace=trace,
        event_budget=cfg.event_budget,
        **sim_kwargs,
    )
    return sim.run()


def measure(cfg: ExperimentConfig, result: RunResult, *, keep_series: bool = False) -> Measurement:
    sums = np.array(result.iteration_sums()[cfg.warmup:], dtype=np.int64)
    lat = sums / (cfg.n * 1000.0)
    # the mean straight from integer nanoseconds, independent of summation order
    mean = int(sums.sum()) / (cfg.n * 1000.0 * len(sums))
    p50, p99 = np.percentile(lat, [50, 99])
    return Measurement(
        config=cfg,
        mean_us=mean,
        min_us=float(lat.min()),
        max_us=float(lat.max()),
        p50_us=float(p50),
        p99_us=float(p99),
        packets={k.value: result.sent.get(k, 0) for k in Kind},
        retransmits=result.retransmits,
        barriers=len(result.completions),
        series_us=[float(x) for x in lat] if keep_series else None,
        trace=result.sorted_trace() if result.trace is not None else None,
        lookahead_violations=result.lookahead_violations,
        events=result.events,
    )


def run_experiment(cfg: ExperimentConfig, *, trace: bool = False, keep_series: bool = False) -> Measurement:
    if cfg.n == 1:
        # a one-rank barrier is a no-op: nothing to wait for, nothing sent
        zeros = [0.0] * cfg.iterations if keep_series else None
        return Measurement(cfg, 0.0, 0.0, 0.0, 0.0, 0.0, {k.value: 0 for k in Kind}, 0,
                           cfg.warmup + cfg.iterations, zeros, [] if trace else None)
    return measure(cfg, simulate(cfg, trace=trace), keep_series=keep_series)


def _run_plain(cfg):
    return run_experiment(cfg)


def run_sweep(configs, workers: int = 1) -> list[Measurement]:
    """Run independent experiments, optionally in worker processes.

    The result order is by (platform, mode, algorithm, n, seed) whatever
    order the experiments finish in.
    """
    configs = list(configs)
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_run_plain, configs))
    else:
        out = [run_experiment(c) for c in configs]
    return sorted(out, key=lambda m: (*m.config.key, m.config.seed))


# ----------------------------------------------------------- comparison


@dataclass
class Comparison:
    measurements: dict[str, Measurement]
    ratios: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "means_us": {m: round(v.mean_us, 3) for m, v in self.measurements.items()},
            "ratios": {k: round(v, 4) for k, v in self.ratios.items()},
        }


def applicable_modes(cfg: ExperimentConfig) -> list[str]:
    modes = ["host", "nic-pt2pt", "nic-collective"]
    if cfg.cost_model().reliable_network:
        modes.append("elan-chain")
    return modes


def compare_modes(cfg: ExperimentConfig) -> Comparison:
    """Run every applicable mode with the base config's seed and report
    how much faster each NIC-based mode is than the host-based one."""
    ms = {m: run_experiment(replace(cfg, mode=m)) for m in applicable_modes(cfg)}
    host = ms["host"].mean_us
    ratios = {}
    for m in ms:
        if m != "host" and ms[m].mean_us > 0:
            ratios[f"host/{m}"] = host / ms[m].mean_us
    return Comparison(ms, ratios)


# ---------------------------------------------------------- trace checks


@dataclass
class SafetyReport:
    early_completions: list[tuple[int, int]]  # (barrier, rank) that left before everyone entered
    lookahead_violations: int

    @property
    def ok(self) -> bool:
        return not self.early_completions and self.lookahead_violations == 0


def check_safety(result: RunResult) -> SafetyReport:
    early = []
    for k, (entries, comps) in enumerate(zip(result.entries, result.completions)):
        last_in = max(entries)
        early.extend((k, r) for r, c in enumerate(comps) if c < last_in)
    return SafetyReport(early, result.lookahead_violations)


def unrecovered_drops(trace) -> list[tuple]:
    """Message identities whose drops outnumber their retransmissions.

    A message here is a BARRIER or DATA packet identified by
    (src, dst, group, round, seq); a dropped ACK counts against the DATA
    it acknowledges.  Every lost copy of a message that was eventually
    received must be covered by a retransmission, so in a completed run
    this list is empty.
    """
    drops: Counter = Counter()
    retx: Counter = Counter()
    for _, kind, src, dst, group, rnd, seq, action in trace:
        if kind in ("BARRIER", "DATA"):
            ident = (kind, src, dst, group, rnd, seq)
        elif kind == "ACK":
            ident = ("DATA", dst, src, group, rnd, seq)
        else:
            continue
        if action == "drop":
            drops[ident] += 1
        elif action == "retransmit":
            retx[ident] += 1
    return sorted(i for i, d in drops.items() if retx[i] < d)


def count_by_kind(trace) -> dict[str, int]:
    out: dict[str, int] = defaultdict(int)
    for row in trace:
        if row[7] in ("send", "retransmit"):
            out[row[1]] += 1
    return dict(out)


# ------------------------------------------------------------------- I/O


def write_csv(measurements, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for m in measurements:
        w.writerow(m.csv_row())


def csv_text(measurements) -> str:
    buf = io.StringIO()
    write_csv(measurements, buf)
    return buf.getvalue()


def write_trace(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    w.writerows(rows)


def read_csv(fh) -> list[dict]:
    rows = list(csv.DictReader(fh))
    if rows and set(CSV_COLUMNS) - set(rows[0]):
        missing = sorted(set(CSV_COLUMNS) - set(rows[0]))
        raise ConfigError(f"results CSV is missing columns: {', '.join(missing)}")
    return rows
