import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import two_ulr_timeline
from vnpaas.diameter import DiameterMessage
from vnpaas.hss import (CalibrationError, CommandCost, FrontEndVnf, UdrModel,
                        calibrate_arrival_rate, mean_service_ms, measure_busy_fraction,
                        service_table, udr_query)
from vnpaas.sim import Engine, ms
from vnpaas.workload import COMMAND_MIX, TrafficGenerator, TrafficProfile


def message(i, cmd, t=0):
    app = "S6a" if cmd in ("AIR", "PUR", "ULR") else "Cx"
    return DiameterMessage(i, f"s{i}", app, cmd, t)


def make_fe(apps=("S6a", "Cx"), table=None, **kw):
    eng = Engine()
    table = table or service_table()
    done = []
    udr = UdrModel(eng, table)
    fe = FrontEndVnf(eng, "fe", apps, udr, table, lambda f, m: done.append(m), **kw)
    return eng, fe, udr, done


def test_empty_fe_one_air():
    table = service_table({"AIR": {"cpu_ms": 2, "db_ms": 1}})
    eng, fe, _, done = make_fe(("S6a",), table)
    fe.handle(message(1, "AIR"))
    eng.run()
    assert done[0].response_time == ms(3)


def test_lir_waits_behind_ulr_in_full_fe():
    eng, fe, _, done = make_fe()
    fe.handle(message(1, "ULR"))
    fe.handle(message(2, "LIR"))
    eng.run()
    lir = [m for m in done if m.command == "LIR"][0]
    assert lir.response_time >= ms(100)
    assert lir.response_time == ms(115 + 3)
    assert fe.cross_application_waits == 1


def test_simultaneous_arrivals_are_fifo():
    eng, fe, _, done = make_fe()
    for i, cmd in enumerate(["AIR", "LIR", "PUR", "UAR"]):
        fe.handle(message(i, cmd))
    eng.run()
    assert [m.message_id for m in done] == [0, 1, 2, 3]


def test_application_mismatch_rejected_and_counted():
    eng, fe, _, _ = make_fe(("Cx",))
    assert fe.handle(message(1, "AIR")) is False
    assert fe.rejected == 1


def test_udr_non_ulr_exact():
    eng = Engine()
    udr = UdrModel(eng, service_table())
    got = []
    udr_query("MAR", udr, got.append)
    eng.run()
    assert got == [ms(2)]


def test_udr_single_ulr_exact():
    eng = Engine()
    udr = UdrModel(eng, service_table())
    got = []
    udr_query("ULR", udr, got.append)
    assert udr.in_flight_ulr == 1
    eng.run()
    assert got == [ms(110)] and udr.in_flight_ulr == 0


def test_two_fully_overlapping_ulrs():
    eng = Engine()
    udr = UdrModel(eng, service_table())
    got = []
    udr.query("ULR", got.append)
    udr.query("ULR", got.append)
    eng.run()
    assert got == [ms(110 * 1.28)] * 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 150_000), st.sampled_from([0.0, 0.15, 0.28, 0.5, 1.0]))
def test_two_ulrs_match_timeline_oracle(offset_us, factor):
    table = service_table({"ULR": {"db_contention_factor": factor}})
    eng = Engine()
    udr = UdrModel(eng, table)
    ends = {}
    udr.query("ULR", lambda d: ends.setdefault(0, eng.now))
    eng.schedule(offset_us, lambda: udr.query("ULR", lambda d: ends.setdefault(1, eng.now)))
    eng.run()
    expected = two_ulr_timeline(110, factor, offset_us)
    assert abs(ends[0] - expected[0]) <= 2 and abs(ends[1] - expected[1]) <= 2


def test_udr_queues_beyond_server_count():
    eng = Engine()
    udr = UdrModel(eng, service_table(), server_count=2)
    got = []
    for _ in range(3):
        udr.query("AIR", lambda d: got.append(eng.now))
    eng.run()
    assert got == [ms(2), ms(2), ms(4)]


def test_negative_cost_rejected():
    with pytest.raises(ValueError):
        CommandCost(-1, 0)
    with pytest.raises(ValueError):
        service_table({"XYZ": {"cpu_ms": 1}})


def _poisson_fe(rate, apps, mix, seed, duration_s, sync_db=True):
    eng = Engine()
    table = service_table()
    udr = UdrModel(eng, table)
    done = []
    fe = FrontEndVnf(eng, "fe", apps, udr, table, lambda f, m: done.append(m), sync_db=sync_db)
    prof = TrafficProfile(apps[0], mix, duration_s, rate=rate, seed=seed)
    TrafficGenerator(eng, prof, fe.handle).start()
    return eng, fe, done


def test_completion_order_is_arrival_order():
    eng, fe, done = _poisson_fe(20, ("S6a",), COMMAND_MIX["S6a"], 3, 30)
    eng.run()
    ids = [m.message_id for m in done]
    assert ids == sorted(ids) and len(ids) > 400


def test_work_conservation():
    eng, fe, _ = _poisson_fe(25, ("S6a",), COMMAND_MIX["S6a"], 4, 20)
    while eng.run(limit=1):
        assert not (fe.queue and fe.busy == 0)


def test_async_db_releases_server_early():
    eng, fe, udr, done = make_fe(("S6a",), sync_db=False)
    fe.handle(message(1, "ULR"))
    fe.handle(message(2, "AIR"))
    eng.run()
    air = [m for m in done if m.command == "AIR"][0]
    assert air.response_time == ms(5 + 3 + 2)


def test_stop_drops_queued_and_in_service():
    eng, fe, udr, done = make_fe()
    for i, cmd in enumerate(["ULR", "LIR", "AIR"]):
        fe.handle(message(i, cmd))
    eng.run_until(ms(50))
    dropped = fe.stop()
    eng.run()
    assert sorted(m.message_id for m in dropped) == [0, 1, 2]
    assert done == [] and udr.in_flight_ulr == 0 and fe.handle(message(9, "AIR")) is False


def test_split_fe_accepts_one_application_only():
    eng, fe, done = _poisson_fe(200, ("Cx",), COMMAND_MIX["Cx"], 5, 10)
    eng.run()
    assert fe.cross_application_waits == 0 and fe.rejected == 0


# calibration -------------------------------------------------------------------

def test_calibration_rejects_zero_target():
    with pytest.raises(CalibrationError):
        calibrate_arrival_rate(0.0, service_table(), COMMAND_MIX["S6a"])


def test_calibration_rejects_bad_mix():
    with pytest.raises(CalibrationError):
        calibrate_arrival_rate(0.5, service_table(), {"AIR": 60, "PUR": 30})


def test_calibration_unattainable_reports_bound():
    with pytest.raises(CalibrationError) as exc:
        calibrate_arrival_rate(0.9, service_table(), COMMAND_MIX["S6a"], max_rate=10)
    assert exc.value.achievable == pytest.approx(10 * mean_service_ms(service_table(),
                                                                      COMMAND_MIX["S6a"]) / 1000)


def test_calibration_pure_air_half_load():
    table = service_table({"AIR": {"cpu_ms": 2, "db_ms": 0}})
    rate = calibrate_arrival_rate(0.5, table, {"AIR": 100}, seed=11)
    assert rate == pytest.approx(250, rel=0.03)


def test_calibration_s6a_at_090_verifies():
    table = service_table()
    rate = calibrate_arrival_rate(0.9, table, COMMAND_MIX["S6a"], seed=2, interface="S6a")
    busy = measure_busy_fraction(rate, COMMAND_MIX["S6a"], table, seed=2, interface="S6a")
    assert abs(busy - 0.9) <= 0.01


def test_calibration_is_deterministic():
    table = service_table()
    a = calibrate_arrival_rate(0.7, table, COMMAND_MIX["Cx"], seed=9, duration_s=20)
    b = calibrate_arrival_rate(0.7, table, COMMAND_MIX["Cx"], seed=9, duration_s=20)
    assert a == b


@pytest.mark.parametrize("iface,r,duration_s", [("S6a", 0.5, 1800), ("Cx", 0.5, 300),
                                                ("Cx", 0.9, 300)])
def test_utilization_identity_on_long_runs(iface, r, duration_s):
    table = service_table()
    mix = COMMAND_MIX[iface]
    rate = r / mean_service_ms(table, mix) * 1000.0
    busy = measure_busy_fraction(rate, mix, table, seed=21, duration_s=duration_s, interface=iface,
                                 stream="identity")
    assert busy == pytest.approx(r, rel=0.05)
