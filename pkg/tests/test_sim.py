import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnpaas.sim import Engine, RngStream, SchedulingError, as_ms, draw, ms


def test_schedule_does_not_advance_clock():
    eng = Engine()
    ev = eng.schedule(0, lambda: None)
    assert ev is not None and eng.now == 0


def test_dispatch_in_time_order():
    eng, seen = Engine(), []
    eng.schedule(5, seen.append, 5)
    eng.schedule(3, seen.append, 3)
    eng.run()
    assert seen == [3, 5]


def test_ties_dispatch_in_insertion_order():
    eng, seen = Engine(), []
    eng.schedule(7, seen.append, "A")
    eng.schedule(7, seen.append, "B")
    eng.run()
    assert seen == ["A", "B"]


def test_scheduling_in_the_past_names_both_times():
    eng = Engine()
    eng.run_until(100)
    with pytest.raises(SchedulingError, match=r"t=50us.*t=100us"):
        eng.schedule(50, lambda: None)


def test_run_until_empty_queue():
    eng = Engine()
    assert eng.run_until(100) == 0
    assert eng.now == 100


def test_run_until_counts_only_due_events():
    eng = Engine()
    for t in (10, 20, 30, 200):
        eng.schedule(t, lambda: None)
    assert eng.run_until(100) == 3
    assert eng.pending() == 1


def test_cascade_within_horizon():
    eng, seen = Engine(), []

    def first():
        seen.append(eng.now)
        eng.schedule_in(10, lambda: seen.append(eng.now))

    eng.schedule(5, first)
    assert eng.run_until(100) == 2
    assert seen == [5, 15]


def test_cancelled_event_never_fires():
    eng, seen = Engine(), []
    ev = eng.schedule(5, seen.append, 1)
    ev.cancel()
    eng.run()
    assert seen == [] and eng.pending() == 0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.booleans()), min_size=1, max_size=60))
def test_dispatch_is_sorted_by_time_then_sequence(spec):
    eng = Engine(trace=True)
    fired = []
    events = []
    for i, (t, cancel) in enumerate(spec):
        ev = eng.schedule(t, fired.append, i, kind="k", detail=str(i))
        events.append((ev, cancel))
    for ev, cancel in events:
        if cancel:
            ev.cancel()
    eng.run()
    expected = sorted((t, i) for i, (t, c) in enumerate(spec) if not c)
    assert fired == [i for _, i in expected]
    assert [(t, s) for t, s, _, _ in eng.trace] == sorted((t, s) for t, s, _, _ in eng.trace)


def test_trace_dump_format():
    eng = Engine(trace=True)
    eng.schedule(3, lambda: None, kind="ping", detail="x")
    eng.run()
    buf = io.StringIO()
    eng.dump_trace(buf)
    assert buf.getvalue() == "3\t0\tping\tx\n"


def test_ms_conversion_round_trip():
    assert ms(1.5) == 1500
    assert as_ms(1500) == 1.5


def test_exponential_mean_law_of_large_numbers():
    s = RngStream(7, "lln")
    n = 100_000
    mean = sum(draw(s, "exponential", 10.0) for _ in range(n)) / n
    assert abs(mean - 10.0) / 10.0 < 0.02


def test_same_seed_same_draws():
    a, b = RngStream(3, "x"), RngStream(3, "x")
    assert [a.uniform() for _ in range(100)] == [b.uniform() for _ in range(100)]


def test_streams_differ_by_label():
    a, b = RngStream(3, "x"), RngStream(3, "y")
    assert [a.uniform() for _ in range(5)] != [b.uniform() for _ in range(5)]


def test_uniform_range():
    s = RngStream(1, "u")
    assert all(0.0 <= draw(s, "uniform") < 1.0 for _ in range(10_000))


@pytest.mark.parametrize("mean", [0, -1])
def test_non_positive_mean_rejected(mean):
    with pytest.raises(ValueError):
        draw(RngStream(1, "e"), "exponential", mean)


def test_unknown_distribution_rejected():
    with pytest.raises(ValueError):
        draw(RngStream(1, "e"), "normal", 1.0)
