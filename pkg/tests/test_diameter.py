import collections
import io

import pytest

from vnpaas.diameter import (BackendRegistration, DiameterMessage, DiameterRouter, RoutingError)
from vnpaas.sim import Engine


def msg(i, app="S6a", cmd=None):
    return DiameterMessage(i, f"s{i}", app, cmd or ("AIR" if app == "S6a" else "LIR"), 0)


def test_split_routes_each_application_to_its_backend():
    r = DiameterRouter()
    r.register_backend(BackendRegistration("S6a", {"S6a"}))
    r.register_backend(BackendRegistration("Cx", {"Cx"}))
    assert r.route(msg(1, "S6a")) == "S6a"
    assert r.route(msg(2, "Cx")) == "Cx"


def test_full_alternates_between_two_backends():
    r = DiameterRouter()
    r.register_backend(BackendRegistration("fe-1", {"S6a", "Cx"}))
    r.register_backend(BackendRegistration("fe-2", {"S6a", "Cx"}))
    assert [r.route(msg(i)) for i in range(4)] == ["fe-1", "fe-2", "fe-1", "fe-2"]


def test_cursors_are_per_application():
    r = DiameterRouter()
    r.register_backend(BackendRegistration("fe-1", {"S6a", "Cx"}))
    r.register_backend(BackendRegistration("fe-2", {"S6a", "Cx"}))
    r.route(msg(1, "S6a"))
    r.route(msg(2, "S6a"))
    r.route(msg(3, "S6a"))
    assert r.route(msg(4, "Cx")) == "fe-1"


def test_no_backend_is_routing_error_and_counted():
    r = DiameterRouter()
    with pytest.raises(RoutingError):
        r.route(msg(1, "Cx"))
    assert r.dropped == 1


def test_unknown_application_rejected():
    with pytest.raises(ValueError):
        DiameterMessage(1, "s", "Sh", "UDR", 0)
    with pytest.raises(ValueError):
        DiameterMessage(1, "s", "S6a", "LIR", 0)


def test_deregister_keeps_rotation_fair():
    r = DiameterRouter()
    for b in ("a", "b", "c"):
        r.register_backend(BackendRegistration(b, {"S6a"}))
    assert r.route(msg(1)) == "a"
    r.deregister_backend("a")
    assert [r.route(msg(i)) for i in range(4)] == ["b", "c", "b", "c"]


def test_deregister_last_in_rotation_wraps():
    r = DiameterRouter()
    for b in ("a", "b"):
        r.register_backend(BackendRegistration(b, {"S6a"}))
    r.route(msg(1))
    r.deregister_backend("b")
    assert r.route(msg(2)) == "a"


def test_duplicate_and_unknown_registration_errors():
    r = DiameterRouter()
    r.register_backend(BackendRegistration("a", {"S6a"}))
    with pytest.raises(RoutingError):
        r.register_backend(BackendRegistration("a", {"Cx"}))
    with pytest.raises(RoutingError):
        r.deregister_backend("zzz")
    with pytest.raises(ValueError):
        BackendRegistration("x", set())


def test_handler_called_and_audit_written():
    got = []
    r = DiameterRouter(audit=[])
    r.register_backend(BackendRegistration("a", {"S6a"}), got.append)
    m = msg(7)
    r.route(m)
    assert got == [m] and m.backend_id == "a"
    buf = io.StringIO()
    r.dump_audit(buf)
    assert buf.getvalue() == "7\tS6a\tAIR\ta\n"


def test_proxy_delay_defers_delivery():
    eng, got = Engine(), []
    r = DiameterRouter(eng, proxy_delay=250)
    r.register_backend(BackendRegistration("a", {"S6a"}), lambda m: got.append(eng.now))
    r.route(msg(1))
    assert got == []
    eng.run()
    assert got == [250]


def test_even_split_over_many_messages():
    r = DiameterRouter()
    for b in ("a", "b", "c"):
        r.register_backend(BackendRegistration(b, {"Cx"}))
    counts = collections.Counter(r.route(msg(i, "Cx")) for i in range(300))
    assert set(counts.values()) == {100}
