"""Platform cost models, node placement and the packet-loss draw."""

from __future__ import annotations

import dataclasses
import functools
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .engine import Rng, check_time, us

PRESET_FILE_VERSION = 1
DEFAULT_PORTS_PER_SWITCH = 8
SAME_SWITCH_HOPS = 1
CROSS_SWITCH_HOPS = 3

# Fields given in microseconds in preset files.
TIME_FIELDS = (
    "c_host_proc",
    "c_host_post",
    "c_nic_to_host_event",
    "c_queue_pass",
    "c_pkt_alloc",
    "c_nic_send",
    "c_nic_recv",
    "c_record",
    "c_wire",
    "c_hop",
    "sender_timeout",
    "receiver_timeout",
)


class ConfigError(ValueError):
    """Invalid preset or experiment configuration."""


@dataclass(frozen=True)
class CostModel:
    """Latency constants of one simulated platform, all in nanoseconds.

    ``receiver_timeout`` / ``sender_timeout`` default to
    4 x (worst transit + receive + record) and twice that.
    """

    platform_name: str
    c_host_proc: int
    c_host_post: int
    c_nic_to_host_event: int
    c_queue_pass: int
    c_pkt_alloc: int
    c_nic_send: int
    c_nic_recv: int
    c_record: int
    c_wire: int
    c_hop: int
    loss_prob: float = 0.0
    sender_timeout: int | None = None
    receiver_timeout: int | None = None
    reliable_network: bool = False

    def __post_init__(self):
        for name in TIME_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if not isinstance(value, int):
                raise ConfigError(f"{name} must be integer nanoseconds, got {value!r}")
            if value < 0:
                raise ConfigError(f"{name} must be >= 0, got {value}")
            check_time(value)
        if not 0.0 <= self.loss_prob < 1.0:
            raise ConfigError(f"loss_prob must be in [0, 1), got {self.loss_prob}")
        if self.reliable_network and self.loss_prob > 0:
            raise ConfigError(
                f"{self.platform_name} is a reliable network; loss_prob must be 0, got {self.loss_prob}"
            )
        if self.receiver_timeout is None:
            object.__setattr__(self, "receiver_timeout", self._default_receiver_timeout())
        if self.sender_timeout is None:
            object.__setattr__(self, "sender_timeout", 2 * self.receiver_timeout)

    def _default_receiver_timeout(self) -> int:
        max_transit = self.c_wire + CROSS_SWITCH_HOPS * self.c_hop
        return max(4 * (max_transit + self.c_nic_recv + self.c_record), 1)

    def replace(self, **changes) -> "CostModel":
        fields = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        # derived timeouts are recomputed unless they were set explicitly
        if self.receiver_timeout == self._default_receiver_timeout() and "receiver_timeout" not in changes:
            fields["receiver_timeout"] = None
            if self.sender_timeout == 2 * self.receiver_timeout and "sender_timeout" not in changes:
                fields["sender_timeout"] = None
        fields.update(changes)
        return CostModel(**fields)

    def scaled(self, factor: int) -> "CostModel":
        """Every time constant multiplied by an integer factor."""
        return self.replace(**{name: getattr(self, name) * factor for name in TIME_FIELDS})

    @classmethod
    def from_us(cls, platform_name: str, values: dict) -> "CostModel":
        kwargs = {}
        for key, value in values.items():
            if key in TIME_FIELDS:
                kwargs[key] = None if value is None else us(value)
            elif key in ("loss_prob", "reliable_network"):
                kwargs[key] = value
            elif key == "description":
                continue
            else:
                raise ConfigError(f"preset {platform_name!r}: unknown field {key!r}")
        missing = [f for f in TIME_FIELDS if f not in kwargs and f not in ("sender_timeout", "receiver_timeout")]
        if missing:
            raise ConfigError(f"preset {platform_name!r}: missing fields {', '.join(missing)}")
        return cls(platform_name=platform_name, **kwargs)


def load_presets(path: str | Path | None = None) -> dict[str, CostModel]:
    """Read a preset file; the bundled one when ``path`` is None."""
    if path is None:
        return dict(_bundled_presets())
    return _parse_presets(Path(path).read_text())


@functools.lru_cache(maxsize=1)
def _bundled_presets() -> dict[str, CostModel]:
    return _parse_presets(resources.files("nicsim.data").joinpath("presets.json").read_text())


def _parse_presets(text: str) -> dict[str, CostModel]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"preset file: line {exc.lineno}: {exc.msg}") from exc
    if doc.get("version") != PRESET_FILE_VERSION:
        raise ConfigError(f"unsupported preset file version {doc.get('version')!r}")
    return {name: CostModel.from_us(name, body) for name, body in doc["platforms"].items()}


def get_preset(name: str, path: str | Path | None = None) -> CostModel:
    presets = load_presets(path)
    try:
        return presets[name]
    except KeyError:
        raise ConfigError(f"unknown platform {name!r}; known: {', '.join(sorted(presets))}") from None


@dataclass(frozen=True)
class Placement:
    """Ranks mapped onto nodes behind a two-level switch hierarchy."""

    rank_to_node: tuple[int, ...]
    ports_per_switch: int = DEFAULT_PORTS_PER_SWITCH

    def __post_init__(self):
        if sorted(self.rank_to_node) != list(range(len(self.rank_to_node))):
            raise ValueError("rank_to_node must be a permutation of 0..n-1")
        if self.ports_per_switch < 1:
            raise ValueError("ports_per_switch must be >= 1")

    @property
    def n_ranks(self) -> int:
        return len(self.rank_to_node)

    @classmethod
    def identity(cls, n: int, ports_per_switch: int = DEFAULT_PORTS_PER_SWITCH) -> "Placement":
        return cls(tuple(range(n)), ports_per_switch)

    def switch_of(self, rank: int) -> int:
        return self.rank_to_node[rank] // self.ports_per_switch

    def hop_count(self, src: int, dst: int) -> int:
        if self.switch_of(src) == self.switch_of(dst):
            return SAME_SWITCH_HOPS
        return CROSS_SWITCH_HOPS


def transit_time(model: CostModel, placement: Placement, src: int, dst: int) -> int:
    n = placement.n_ranks
    if not (0 <= src < n and 0 <= dst < n):
        raise ValueError(f"rank out of range: {src} -> {dst} (n={n})")
    if src == dst:
        raise ValueError(f"transit from rank {src} to itself")
    return model.c_wire + placement.hop_count(src, dst) * model.c_hop


def transit_table(model: CostModel, placement: Placement) -> list[list[int]]:
    """All pairwise transit times; the diagonal is unused and left at 0."""
    n = placement.n_ranks
    return [[0 if s == d else transit_time(model, placement, s, d) for d in range(n)] for s in range(n)]


def should_drop(model: CostModel, rng: Rng) -> bool:
    if model.loss_prob <= 0.0:
        return False
    return rng.random() < model.loss_prob


def permute_placement(n: int, rng: Rng, ports_per_switch: int = DEFAULT_PORTS_PER_SWITCH) -> Placement:
    """Uniform random placement (Fisher-Yates over the rng stream)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    nodes = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.below(i + 1)
        nodes[i], nodes[j] = nodes[j], nodes[i]
    return Placement(tuple(nodes), ports_per_switch)
