import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nicsim.engine import (
    MAX_TIME,
    Engine,
    EventBudgetExceeded,
    Rng,
    check_time,
    derive_seed,
    fmt_us,
    to_us,
    us,
)


def make_engine(**kw):
    eng = Engine(**kw)
    seen = []
    eng.register("a", lambda p: seen.append((eng.now, p)))
    return eng, seen


def test_us_conversion_is_exact():
    assert us(14.2) == 14200
    assert us("0.33") == 330
    assert us("0.0005") == 1  # half-up at the nanosecond
    assert to_us(38940) == pytest.approx(38.94)


def test_fmt_us_rounds_half_up():
    assert fmt_us(38940) == "38.94"
    assert fmt_us(5) == "0.01"
    assert fmt_us(4) == "0.00"
    assert fmt_us(22125) == "22.13"


def test_negative_and_overflowing_times_rejected():
    with pytest.raises(ValueError):
        check_time(-1)
    with pytest.raises(OverflowError):
        check_time(MAX_TIME + 1)
    eng, _ = make_engine()
    with pytest.raises(OverflowError):
        eng.schedule(MAX_TIME + 1, "a")


def test_empty_queue_returns_zero():
    assert Engine().run_until_idle() == 0


def test_single_event_returns_its_time():
    eng, seen = make_engine()
    eng.schedule(us(5), "a", "x")
    assert eng.run_until_idle() == 5000
    assert seen == [(5000, "x")]


def test_self_rescheduling_chain():
    eng = Engine()
    k, step = 17, 250

    def tick(i):
        if i < k:
            eng.after(step, "t", i + 1)

    eng.register("t", tick)
    eng.schedule(0, "t", 0)
    assert eng.run_until_idle() == k * step
    assert eng.dispatched == k + 1


def test_equal_times_fire_in_insertion_order():
    eng, seen = make_engine()
    for p in "abc":
        eng.schedule(10, "a", p)
    eng.schedule(5, "a", "first")
    eng.run_until_idle()
    assert [p for _, p in seen] == ["first", "a", "b", "c"]


def test_schedule_at_now_fires_before_later_events():
    eng, seen = make_engine()
    eng.register("b", lambda p: eng.schedule(eng.now, "a", "now"))
    eng.schedule(3, "b")
    eng.schedule(4, "a", "later")
    eng.run_until_idle()
    assert [p for _, p in seen] == ["now", "later"]


def test_scheduling_in_the_past_fails():
    eng = Engine()
    eng.register("b", lambda p: eng.schedule(eng.now - 1, "b"))
    eng.schedule(10, "b")
    with pytest.raises(ValueError):
        eng.run_until_idle()


def test_cancel_semantics():
    eng, seen = make_engine(record_log=True)
    h = eng.schedule(5, "a", "gone")
    keep = eng.schedule(6, "a", "kept")
    assert eng.cancel(h) is True
    assert eng.cancel(h) is False
    eng.run_until_idle()
    assert seen == [(6, "kept")]
    assert eng.cancel(keep) is False  # already fired
    assert [row[0] for row in eng.log] == [6]


def test_duplicate_registration_rejected():
    eng, _ = make_engine()
    with pytest.raises(ValueError):
        eng.register("a", print)


def test_event_budget_stops_livelock():
    eng = Engine(event_budget=100)
    eng.register("loop", lambda p: eng.after(1, "loop"))
    eng.schedule(0, "loop")
    with pytest.raises(EventBudgetExceeded):
        eng.run_until_idle()
    assert eng.dispatched == 101


def test_log_digest_is_reproducible():
    def run():
        eng = Engine(record_log=True)
        eng.register("x", lambda p: eng.after(3, "x", p + 1) if p < 20 else None)
        eng.schedule(0, "x", 0)
        eng.run_until_idle()
        return eng.log_digest()

    assert run() == run()
    with pytest.raises(RuntimeError):
        Engine().log_digest()


@settings(max_examples=60)
@given(st.lists(st.integers(min_value=0, max_value=50), min_size=1, max_size=60))
def test_dispatch_order_is_time_then_fifo(times):
    eng, seen = make_engine()
    for i, t in enumerate(times):
        eng.schedule(t, "a", i)
    eng.run_until_idle()
    expected = sorted(range(len(times)), key=lambda i: (times[i], i))
    assert [p for _, p in seen] == expected


def test_rng_streams_are_reproducible_and_independent():
    a, b = Rng(42, "x"), Rng(42, "x")
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]
    c = Rng(42, "y")
    assert Rng(42, "x").random() != c.random()
    assert Rng(1).split("k").random() == Rng(1, "k").random()
    assert derive_seed(1, "k") != derive_seed(2, "k")


def test_rng_known_values_are_stable():
    # pins the seed derivation; a change here changes every experiment
    assert derive_seed(0, None) == 12838229664190750768
    r = Rng(7, "loss")
    assert [r.below(1000) for _ in range(4)] == [187, 295, 147, 521]


@given(st.integers(min_value=1, max_value=10**6), st.integers(min_value=0, max_value=2**32))
def test_below_stays_in_range(n, seed):
    r = Rng(seed)
    for _ in range(5):
        assert 0 <= r.below(n) < n


def test_below_rejects_nonpositive():
    with pytest.raises(ValueError):
        Rng(0).below(0)
    assert Rng(0).uniform_ns(0) == 0
