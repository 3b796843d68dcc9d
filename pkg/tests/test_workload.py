import collections
import math

import pytest

from vnpaas.diameter import RoutingError
from vnpaas.sim import Engine, RngStream, ms
from vnpaas.workload import (COMMAND_MIX, TABLE_I_COUNTS, ConservationError, ConservationLedger,
                             TrafficGenerator, TrafficProfile, arrival_times, audit, generate,
                             table_profile)


def test_table_i_counts():
    assert TABLE_I_COUNTS[0.25] == {"S6a": 19067, "Cx": 21234}
    assert TABLE_I_COUNTS[0.50] == {"S6a": 40749, "Cx": 45102}
    assert TABLE_I_COUNTS[0.70] == {"S6a": 59366, "Cx": 64098}
    assert TABLE_I_COUNTS[0.90] == {"S6a": 76783, "Cx": 84131}


def test_command_mix_table():
    assert COMMAND_MIX["S6a"] == {"AIR": 40, "PUR": 30, "ULR": 30}
    assert COMMAND_MIX["Cx"] == {"LIR": 43, "MAR": 2, "SAR": 8, "UAR": 47}
    assert all(sum(m.values()) == 100 for m in COMMAND_MIX.values())


def test_table_profile_rate():
    p = table_profile("Cx", 0.90)
    assert p.rate_per_s == pytest.approx(84131 / 420.0)


def test_fixed_count_mode_rate():
    p = TrafficProfile("S6a", COMMAND_MIX["S6a"], 420.0, total=76783)
    assert p.rate_per_s == pytest.approx(76783 / 420.0)


@pytest.mark.parametrize("kw", [
    {"mix": {"AIR": 50, "PUR": 30}},
    {"mix": {"AIR": 40, "PUR": 30, "LIR": 30}},
    {"rate": 1.0, "total": 5},
    {"rate": None},
    {"duration_s": 0},
    {"arrivals": "bursty"},
])
def test_invalid_profiles(kw):
    args = {"interface": "S6a", "mix": COMMAND_MIX["S6a"], "duration_s": 10.0, "rate": 5.0}
    args.update(kw)
    with pytest.raises(ValueError):
        TrafficProfile(**args)


def test_mix_converges_within_four_sigma():
    p = TrafficProfile("Cx", COMMAND_MIX["Cx"], 600.0, rate=200.0, seed=3)
    cmds = [c for _, c in generate(p)]
    n = len(cmds)
    counts = collections.Counter(cmds)
    for cmd, pct in COMMAND_MIX["Cx"].items():
        q = pct / 100
        assert abs(counts[cmd] - n * q) <= 4 * math.sqrt(n * q * (1 - q))


def test_poisson_count_within_four_sigma():
    p = TrafficProfile("S6a", COMMAND_MIX["S6a"], 500.0, rate=40.0, seed=8)
    n = len(generate(p))
    assert abs(n - 20000) <= 4 * math.sqrt(20000)


def test_deterministic_mode_is_evenly_spaced():
    p = TrafficProfile("S6a", COMMAND_MIX["S6a"], 1.0, rate=10.0, arrivals="deterministic")
    times = [t for t, _ in generate(p)]
    assert times == [ms(100 * k) for k in range(1, 10)]


def test_arrivals_stay_inside_duration():
    p = TrafficProfile("Cx", COMMAND_MIX["Cx"], 2.0, rate=500.0, seed=1)
    assert all(0 < t < ms(2000) for t, _ in arrival_times(p, RngStream(1, "x")))


def test_zero_rate_generates_nothing():
    p = TrafficProfile("S6a", COMMAND_MIX["S6a"], 5.0, rate=0.0)
    assert generate(p) == []


def test_interfaces_draw_from_independent_streams():
    base = TrafficProfile("S6a", COMMAND_MIX["S6a"], 60.0, rate=20.0, seed=4)

    def s6a_arrivals(cx_rate):
        eng = Engine()
        seen = []
        TrafficGenerator(eng, base, lambda m: seen.append((eng.now, m.command)) or True).start()
        cx = TrafficProfile("Cx", COMMAND_MIX["Cx"], 60.0, rate=cx_rate, seed=4)
        TrafficGenerator(eng, cx, lambda m: True).start()
        eng.run()
        return seen

    assert s6a_arrivals(50.0) == s6a_arrivals(300.0)


def test_same_seed_same_workload():
    p = TrafficProfile("Cx", COMMAND_MIX["Cx"], 10.0, rate=100.0, seed=12)
    assert generate(p) == generate(p)
    q = TrafficProfile("Cx", COMMAND_MIX["Cx"], 10.0, rate=100.0, seed=13)
    assert generate(p) != generate(q)


def test_generator_shares_message_ids():
    eng, ids = Engine(), iter(range(1, 10**6))
    seen = []
    for iface in COMMAND_MIX:
        p = TrafficProfile(iface, COMMAND_MIX[iface], 5.0, rate=50.0, seed=1)
        TrafficGenerator(eng, p, lambda m: seen.append(m.message_id) or True, ids=ids).start()
    eng.run()
    assert len(set(seen)) == len(seen)


def test_rejected_and_unroutable_messages_are_dropped():
    eng = Engine()
    ledger = ConservationLedger()
    p = TrafficProfile("S6a", COMMAND_MIX["S6a"], 5.0, rate=50.0, seed=2)
    calls = iter(range(10**6))

    def sink(msg):
        k = next(calls)
        if k % 3 == 0:
            raise RoutingError("no backend")
        if k % 3 == 1:
            return False
        ledger.completed(msg)
        return True

    gen = TrafficGenerator(eng, p, sink, ledger=ledger)
    gen.start()
    eng.run()
    ledger.close([])
    t = ledger.totals()
    assert t["generated"] == gen.generated == t["completed"] + t["dropped"]
    assert t["dropped"] > 0
    assert audit(ledger)


def test_ledger_reports_imbalanced_cells():
    from vnpaas.diameter import DiameterMessage
    ledger = ConservationLedger()
    m = DiameterMessage(1, "s", "Cx", "LIR", 0)
    ledger.generated(m)
    ledger.generated(m)
    ledger.completed(m)
    assert ledger.imbalances() == {("Cx", "LIR"): 1}
    with pytest.raises(ConservationError, match=r"\(Cx, LIR\): 1"):
        ledger.audit()
    ledger.close([m])
    assert ledger.audit()
    assert list(ledger.rows()) == [("Cx", "LIR", 2, 1, 0, 1)]
