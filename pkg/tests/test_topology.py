import json
from collections import Counter

import pytest

from nicsim.engine import Rng, us
from nicsim.topology import (
    TIME_FIELDS,
    ConfigError,
    CostModel,
    Placement,
    get_preset,
    load_presets,
    permute_placement,
    should_drop,
    transit_table,
    transit_time,
)

PRESETS = ("myrinet-lanai-xp", "myrinet-lanai-9.1", "quadrics-elan3")


def toy(**changes):
    base = dict(c_host_proc=1, c_host_post=1, c_nic_to_host_event=1, c_queue_pass=1, c_pkt_alloc=1,
                c_nic_send=1, c_nic_recv=1, c_record=1, c_wire=us(0.5), c_hop=us(0.1))
    base.update(changes)
    return CostModel("toy", **base)


def test_bundled_presets_load():
    presets = load_presets()
    assert set(PRESETS) <= set(presets)
    assert presets["quadrics-elan3"].reliable_network
    assert not presets["myrinet-lanai-xp"].reliable_network
    for m in presets.values():
        assert m.loss_prob == 0.0
        assert all(getattr(m, f) >= 0 for f in TIME_FIELDS)


def test_unknown_preset():
    with pytest.raises(ConfigError, match="unknown platform"):
        get_preset("infiniband")


def test_preset_file_validation(tmp_path):
    bad = tmp_path / "p.json"
    bad.write_text(json.dumps({"version": 1, "platforms": {"x": {"c_wire": 1, "c_hopp": 2}}}))
    with pytest.raises(ConfigError, match="c_hopp"):
        load_presets(bad)
    bad.write_text(json.dumps({"version": 9, "platforms": {}}))
    with pytest.raises(ConfigError, match="version"):
        load_presets(bad)
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="line 1"):
        load_presets(bad)


def test_cost_model_invariants():
    with pytest.raises(ConfigError):
        toy(c_wire=-1)
    with pytest.raises(ConfigError):
        toy(loss_prob=1.0)
    with pytest.raises(ConfigError):
        toy(reliable_network=True, loss_prob=0.1)
    with pytest.raises(ConfigError):
        get_preset("quadrics-elan3").replace(loss_prob=0.01)


def test_default_timeouts_follow_worst_transit():
    m = toy()
    worst = us(0.5) + 3 * us(0.1)
    assert m.receiver_timeout == 4 * (worst + 1 + 1)
    assert m.sender_timeout == 2 * m.receiver_timeout
    # derived values track changes, explicit ones stick
    assert m.replace(c_wire=0).receiver_timeout == 4 * (3 * us(0.1) + 2)
    fixed = m.replace(receiver_timeout=999)
    assert fixed.replace(c_wire=0).receiver_timeout == 999


def test_scaled_multiplies_every_time_constant():
    m = get_preset("myrinet-lanai-xp")
    s = m.scaled(3)
    for f in TIME_FIELDS:
        assert getattr(s, f) == 3 * getattr(m, f)


def test_transit_examples():
    m = toy()
    p = Placement.identity(16)
    assert transit_time(m, p, 0, 1) == us(0.6)
    assert transit_time(m, p, 0, 8) == us(0.8)
    z = toy(c_wire=0, c_hop=0)
    assert transit_time(z, p, 0, 8) == 0
    with pytest.raises(ValueError):
        transit_time(m, p, 3, 3)
    with pytest.raises(ValueError):
        transit_time(m, p, 0, 16)


def test_transit_table_is_symmetric():
    p = permute_placement(20, Rng(3))
    t = transit_table(toy(), p)
    assert all(t[i][j] == t[j][i] for i in range(20) for j in range(20))
    assert {t[i][j] for i in range(20) for j in range(20) if i != j} == {us(0.6), us(0.8)}


def test_placement_must_be_a_bijection():
    with pytest.raises(ValueError):
        Placement((0, 0, 1))
    assert permute_placement(1, Rng(0)).rank_to_node == (0,)


def test_permutation_is_deterministic():
    assert permute_placement(8, Rng(11)) == permute_placement(8, Rng(11))


def test_permutation_is_uniform():
    rng = Rng(2024)
    counts = Counter(permute_placement(4, rng).rank_to_node for _ in range(10_000))
    assert len(counts) == 24
    for c in counts.values():
        assert abs(c / 10_000 - 1 / 24) <= 0.01


def test_should_drop_rates():
    rng = Rng(5)
    assert not any(should_drop(toy(), rng) for _ in range(1000))
    lossy = toy(loss_prob=0.25)
    drops = sum(should_drop(lossy, rng) for _ in range(100_000))
    assert 0.24 <= drops / 100_000 <= 0.26
