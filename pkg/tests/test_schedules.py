import math
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from nicsim.schedules import (
    DS,
    GB,
    PE,
    AlgorithmKind,
    Round,
    build_all,
    build_schedule,
    ceil_log,
    num_steps,
    validate_schedules,
)

ALGS = [DS, PE, GB, AlgorithmKind.parse("gb:3"), AlgorithmKind.parse("gb:4")]


def active_rounds(schedules):
    """Round indices that carry at least one message anywhere."""
    return {r for s in schedules for r, rnd in enumerate(s.rounds) if rnd.send_to}


def test_parse_and_label():
    assert AlgorithmKind.parse("ds") == DS
    assert AlgorithmKind.parse("GB") == GB
    assert AlgorithmKind.parse("gb:3").degree == 3
    assert AlgorithmKind.parse("gb:2").label == "gb"
    assert AlgorithmKind.parse("gb:4").label == "gb:4"
    with pytest.raises(ValueError):
        AlgorithmKind.parse("tree")
    with pytest.raises(ValueError):
        AlgorithmKind.parse("gb:1")
    with pytest.raises(ValueError):
        AlgorithmKind.parse("ds:2")


def test_step_count_examples():
    assert num_steps(DS, 16) == 4
    assert num_steps(PE, 5) == 4
    assert num_steps(GB, 8) == 6
    with pytest.raises(ValueError):
        num_steps(DS, 0)


@pytest.mark.parametrize("n", range(1, 65))
def test_step_counts_match_brute_force(n):
    log2c = math.ceil(math.log2(n)) if n > 1 else 0
    for alg in ALGS:
        sched = build_all(alg, n)
        assert {len(s.rounds) for s in sched} == {num_steps(alg, n)}
        assert len(active_rounds(sched)) == num_steps(alg, n)
    assert num_steps(DS, n) == log2c
    assert num_steps(PE, n) == (int(math.log2(n)) if n & (n - 1) == 0 else int(math.log2(n)) + 2)
    for d in (2, 3, 4):
        depth = next(k for k in range(20) if d**k >= n)
        assert num_steps(AlgorithmKind.parse(f"gb:{d}"), n) == 2 * depth


def test_ceil_log():
    assert [ceil_log(n, 2) for n in (1, 2, 3, 4, 5, 1024, 1025)] == [0, 1, 2, 2, 3, 10, 11]
    assert ceil_log(10, 3) == 3


def test_schedule_examples():
    assert build_schedule(DS, 8, 3).rounds[1].send_to == (5,)
    pe = build_schedule(PE, 8, 3).rounds[1]
    assert pe.send_to == (1,) and pe.await_from == (1,)
    high = build_schedule(PE, 5, 4)
    assert high.rounds[0].send_to == (0,)
    assert high.rounds[-1].await_from == (0,)
    assert build_schedule(PE, 5, 0).rounds[0].await_from == (4,)
    for alg in ALGS:
        assert build_schedule(alg, 1, 0).rounds == ()


def test_rank_range_checked():
    with pytest.raises(ValueError):
        build_schedule(DS, 4, 4)


@pytest.mark.parametrize("alg", ALGS, ids=lambda a: a.label)
def test_all_schedules_validate(alg):
    for n in range(1, 34):
        assert validate_schedules(build_all(alg, n)) is None, n


def test_no_self_sends():
    for alg in ALGS:
        for n in range(1, 34):
            for s in build_all(alg, n):
                for rnd in s.rounds:
                    assert s.me not in rnd.send_to and s.me not in rnd.await_from


def test_tampered_schedule_names_dangling_send():
    sched = build_all(DS, 8)
    s = sched[5]
    rounds = list(s.rounds)
    rounds[1] = Round(rounds[1].send_to, ())
    sched[5] = replace(s, rounds=tuple(rounds))
    v = validate_schedules(sched)
    assert v.kind == "dangling-send"
    assert (v.round, v.sender, v.receiver) == (1, 3, 5)


def test_unmatched_await_is_reported():
    sched = build_all(DS, 2)
    sched[0] = replace(sched[0], rounds=(Round((1,), (1,)), Round((), (1,))))
    v = validate_schedules(sched)
    assert (v.kind, v.round, v.sender, v.receiver) == ("dangling-await", 1, 1, 0)


def test_shape_mismatch_is_reported():
    sched = build_all(DS, 4)
    assert validate_schedules(sched[:3]).kind == "shape"


def closure_sets(n):
    """knows[i] after each round: ranks whose entry i has (transitively) heard of."""
    sched = build_all(DS, n)
    know = [{i} for i in range(n)]
    out = []
    for m in range(len(sched[0].rounds)):
        new = [set(k) for k in know]
        for s in sched:
            for f in s.rounds[m].await_from:
                new[s.me] |= know[f]
        know = new
        out.append([set(k) for k in know])
    return out


@pytest.mark.parametrize("n", range(2, 18))
def test_dissemination_closure(n):
    for m, know in enumerate(closure_sets(n)):
        for i in range(n):
            assert know[i] == {(i - k) % n for k in range(min(2 ** (m + 1), n))}
    assert all(k == set(range(n)) for k in closure_sets(n)[-1])


@given(st.integers(min_value=1, max_value=200), st.sampled_from(ALGS))
def test_sends_and_awaits_balance(n, alg):
    sched = build_all(alg, n)
    assert sum(s.total_sends for s in sched) == sum(s.total_awaits for s in sched)


def test_message_totals():
    for n in range(2, 40):
        assert sum(s.total_sends for s in build_all(DS, n)) == n * ceil_log(n, 2)
    # PE n=5: one pre-step message, 2 exchange rounds over 4 ranks, one release
    assert sum(s.total_sends for s in build_all(PE, 5)) == 1 + 2 * 4 + 1
    assert sum(s.total_sends for s in build_all(GB, 8)) == 2 * 7


def test_to_json():
    doc = build_schedule(DS, 4, 1).to_json()
    assert doc == {
        "n": 4,
        "rank": 1,
        "rounds": [
            {"round": 0, "send_to": [2], "await_from": [0]},
            {"round": 1, "send_to": [3], "await_from": [3]},
        ],
    }
