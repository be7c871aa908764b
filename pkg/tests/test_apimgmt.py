import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iiotsim.apimgmt import (
    COMPRESSED_AIR_API,
    COMPRESSOR_TELEMETRY_API,
    ApiDescriptor,
    ApiGateway,
    ApiKey,
    CyclicDependency,
    Denial,
    FieldMap,
    Layer,
    MediationGateway,
    MissingField,
    Request,
    SlidingWindowLimiter,
    dependency_order,
    dmz_violations,
    generate_catalog,
    mediate,
)
from iiotsim.netsim import Link, Network, Scheduler, Zone
from oracles import overfull_windows

SECOND = 1_000_000


def _gateway(limit=(5, SECOND), api_limit=None):
    med = MediationGateway()
    med.register(ApiDescriptor("telemetry", Layer.SYSTEM, "backend", rate_limit=api_limit))
    med.register(ApiDescriptor("broken", Layer.SYSTEM, "missing-backend"))
    med.bind_backend("backend", lambda params: {"value": 1.0, **params})
    gw = ApiGateway(med)
    gw.add_key(ApiKey.issue("k1", "s3cret", {"telemetry", "broken", "ghost"}, limit))
    return gw


def test_unknown_key():
    gw = _gateway()
    assert gw.handle_request(Request("nobody:x", "telemetry"), 0).denial is Denial.AUTH_FAILED
    assert gw.handle_request(Request("k1:wrong", "telemetry"), 0).denial is Denial.AUTH_FAILED


def test_scope_miss():
    assert _gateway().handle_request(Request("k1:s3cret", "billing"), 0).denial is Denial.FORBIDDEN


def test_deny_by_default_and_backend_errors():
    gw = _gateway()
    assert gw.handle_request(Request("k1:s3cret", "ghost"), 0).denial is Denial.UNKNOWN_API
    assert gw.handle_request(Request("k1:s3cret", "broken"), 0).denial is Denial.BACKEND_UNAVAILABLE


def test_sixth_request_in_window_is_limited():
    gw = _gateway()
    outcomes = [gw.handle_request(Request("k1:s3cret", "telemetry"), t * 100_000).ok
                for t in range(6)]
    assert outcomes == [True] * 5 + [False]
    assert gw.log[-1][3] == "RATE_LIMITED"
    # the oldest admission leaves the window at exactly t = 1 s
    assert gw.handle_request(Request("k1:s3cret", "telemetry"), SECOND).ok


def test_denials_do_not_consume_quota():
    gw = _gateway(limit=(2, SECOND), api_limit=(1, SECOND))
    assert gw.handle_request(Request("k1:s3cret", "telemetry"), 0).ok
    assert not gw.handle_request(Request("k1:s3cret", "telemetry"), 1).ok
    # the per-api denial above must not have used the key's second slot
    assert gw.handle_request(Request("k1:s3cret", "broken"), 2).denial is Denial.BACKEND_UNAVAILABLE
    assert gw.handle_request(Request("k1:s3cret", "broken"), 3).denial is Denial.RATE_LIMITED


@given(st.lists(st.integers(0, 5 * SECOND), max_size=120), st.integers(1, 8),
       st.integers(1, 2 * SECOND))
def test_rate_limit_replay(times, n, window):
    gw = _gateway(limit=(n, window))
    for t in sorted(times):
        gw.handle_request(Request("k1:s3cret", "telemetry"), t)
    admitted = gw.admitted_times("k1")
    assert overfull_windows(admitted, n, window) == []
    # greedy optimality: each denial happened with a full window
    for t, _, _, outcome, _ in gw.log:
        if outcome == "RATE_LIMITED":
            assert sum(t - window < u <= t for u in admitted) == n


def test_limiter_boundary():
    lim = SlidingWindowLimiter(1, 10)
    assert lim.admit(0)
    assert not lim.admit(9)
    assert lim.admit(10)


def test_key_validation():
    with pytest.raises(ValueError):
        ApiKey.issue("k", "s", set())
    with pytest.raises(ValueError):
        ApiKey.issue("k", "s", {"a"}, (0, 1))


def test_request_line_round_trip():
    r = Request("k1:s", "compressed-air", {"compressor": "c7", "a": "b"})
    assert r.encode() == b"REQ|k1:s|compressed-air|a=b,compressor=c7\n"
    assert Request.decode(r.encode()) == r


# -- mediation -----------------------------------------------------------------

def test_identity_mediation():
    d = ApiDescriptor("x", Layer.SYSTEM, "b")
    assert mediate(d, {"a": 1, "b": 2}) == {"a": 1, "b": 2}


def test_bar_to_kpa():
    out = mediate(COMPRESSED_AIR_API, {"pressure": 1.5, "temperature": 60.0, "power": 7.5, "x": 0})
    assert out == {"pressure_kpa": 150.0, "temperature_c": 60.0, "power_kw": 7.5}


def test_missing_field():
    with pytest.raises(MissingField):
        mediate(COMPRESSED_AIR_API, {"pressure": 1.0})


@given(st.floats(-1e6, 1e6), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_linear_converter(x, a, b):
    d = ApiDescriptor("x", Layer.SYSTEM, "b", mediation=(FieldMap("v", "w", a, b),))
    assert mediate(d, {"v": x}) == {"w": a * x + b}


def test_mediation_gateway_missing_field_is_a_denial():
    med = MediationGateway()
    med.register(COMPRESSED_AIR_API)
    med.bind_backend("platform.query", lambda p: {"pressure": 2.0})
    assert med.route("compressed-air", {}).denial is Denial.MISSING_FIELD


# -- catalog -------------------------------------------------------------------

def _chain():
    return [ApiDescriptor("A", Layer.EXPERIENCE, "b", depends_on={"B"}),
            ApiDescriptor("B", Layer.PROCESS, "b", depends_on={"C"}),
            ApiDescriptor("C", Layer.SYSTEM, "b")]


def test_empty_catalog():
    assert generate_catalog([]) == ""


def test_chain_order():
    assert dependency_order(_chain()) == ["C", "B", "A"]
    cat = generate_catalog(_chain())
    assert cat.splitlines()[-1] == "ORDER|C,B,A"
    assert "DEP|A|B" in cat.splitlines() and "API|C|SYSTEM|b|rate -" in cat.splitlines()


def test_cycle_reports_path():
    descs = [ApiDescriptor("A", Layer.SYSTEM, "b", depends_on={"B"}),
             ApiDescriptor("B", Layer.SYSTEM, "b", depends_on={"A"})]
    with pytest.raises(CyclicDependency) as err:
        generate_catalog(descs)
    assert set(err.value.cycle) == {"A", "B"}
    assert err.value.cycle[0] == err.value.cycle[-1]


def test_catalog_is_deterministic():
    descs = _chain() + [COMPRESSED_AIR_API, COMPRESSOR_TELEMETRY_API]
    shuffled = descs[:]
    random.Random(3).shuffle(shuffled)
    assert generate_catalog(descs) == generate_catalog(shuffled)
    assert "API|compressed-air|EXPERIENCE|platform.query|rate 10/1000000" in generate_catalog(descs)


@given(st.dictionaries(st.sampled_from("abcdefg"), st.sets(st.sampled_from("abcdefg")), max_size=7))
def test_order_respects_dependencies(graph):
    descs = [ApiDescriptor(k, Layer.SYSTEM, "b", depends_on=v & graph.keys()) for k, v in graph.items()]
    try:
        order = dependency_order(descs)
    except CyclicDependency:
        return
    pos = {a: i for i, a in enumerate(order)}
    for d in descs:
        for dep in d.depends_on:
            assert pos[dep] < pos[d.api_id]


# -- topology ------------------------------------------------------------------

def _topology(extra_link=None):
    net = Network(Scheduler())
    net.add_node("internet", zone=Zone.EXTERNAL)
    net.add_node("apigw", zone=Zone.DMZ)
    for n in ("mediation", "platform"):
        net.add_node(n)
    net.add_link(Link("internet", "apigw", 10_000), bidirectional=True)
    net.add_link(Link("apigw", "mediation", 1_000), bidirectional=True)
    net.add_link(Link("mediation", "platform", 1_000), bidirectional=True)
    if extra_link:
        net.add_link(Link(*extra_link, 1))
    return net


def test_dmz_isolation():
    assert dmz_violations(_topology(), "apigw", ["mediation", "platform"]) == []
    bad = dmz_violations(_topology(("internet", "platform")), "apigw", ["platform"])
    assert any("bypasses" in p for p in bad)
    assert dmz_violations(_topology(), "mediation", ["platform"])
