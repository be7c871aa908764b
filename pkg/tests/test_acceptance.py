"""Acceptance criteria, one test each.

Every test prints a single ``criterion N: PASS|FAIL ...`` line (visible in
``pytest -v`` output) and then asserts the same condition.
"""

import dataclasses
import random
import time

import pytest

from iiotsim.apimgmt import ApiDescriptor, ApiGateway, ApiKey, Denial, Layer, MediationGateway, Request
from iiotsim.gateway import CONNECTION_PATTERNS, RawReading, RouteContext, TranslationRuleSet, route_via_pattern
from iiotsim.lambda_arch import FLEET_TARGET_RATE, SMALL_PLANT_RATE, LambdaPipeline, ViewKind, ViewQuery, throughput_harness
from iiotsim.lowpower import (
    FREIGHT_WAGON,
    WATER_METER,
    EnergyModel,
    MessagingPolicy,
    MotionState,
    PayloadCheck,
    PolicyKind,
    estimate_lifetime,
    lifetime_years,
    next_transmissions,
    payload_check,
)
from iiotsim.model import Measurement, OriginPattern, encode_measurement
from iiotsim.netsim import EdgeTier
from iiotsim.platform_core import MeasurementFilter, Platform, Scope, SensorSpec
from iiotsim.scenario import list_scenarios, run_file
from iiotsim.scenario.report import read_summary
from oracles import fold_query, overfull_windows, stepped_schedule


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


# 1 -----------------------------------------------------------------------------

def test_criterion_1_edge_latency_budget(report):
    t0 = time.perf_counter()
    edge = read_summary(run_file("paint_station").csv_text)
    t_edge = time.perf_counter() - t0
    t0 = time.perf_counter()
    cloud = read_summary(run_file("paint_station", ["placement=CLOUD"]).csv_text)
    t_cloud = time.perf_counter() - t0

    faults = int(edge["paint.faults"])
    met = float(edge["paint.deadline_met_fraction"])
    worst = float(edge["paint.max_latency_us"])
    bound = 200_000 + int(edge["paint.path_bound_us"])
    missed = float(cloud["paint.deadline_missed_fraction"])
    ok = (edge["paint.placement"] == "FACTORY_EDGE" and faults >= 50 and met == 1.0
          and worst <= bound and cloud["paint.placement"] == "CLOUD" and missed >= 0.95
          and t_edge < 10 and t_cloud < 10)
    report(1, ok, f"edge: {faults} faults, {met:.0%} met, worst {worst:.0f} us <= {bound} us "
                  f"({t_edge:.1f} s); cloud: {missed:.0%} missed, min "
                  f"{float(cloud['paint.min_latency_us']):.0f} us ({t_cloud:.1f} s)")


# 2 -----------------------------------------------------------------------------

def test_criterion_2_pattern_equivalence(report):
    rng = random.Random(2)
    mismatches = 0
    for i in range(1000):
        scale = rng.choice([1.0, 0.1, 0.01, rng.uniform(-100, 100)])
        offset = rng.choice([0.0, rng.uniform(-1e4, 1e4)])
        unit_id, register = rng.randint(1, 247), rng.randrange(65536)
        rs = TranslationRuleSet.from_rows(1, [(unit_id, register, f"s{i % 7}", scale, offset, "u")])
        ctx = RouteContext("tenant", f"dev{i}", {EdgeTier.DEVICE: rs, EdgeTier.GATEWAY: rs,
                                                 EdgeTier.CLOUD: rs})
        reading = RawReading(unit_id, register, rng.randint(-(2**31), 2**31 - 1),
                             rng.randrange(0, 10**9))
        payloads = set()
        for p in CONNECTION_PATTERNS:
            m = route_via_pattern(p, reading, ctx, seed=i).measurement
            payloads.add(encode_measurement(dataclasses.replace(m, origin_pattern=OriginPattern.NATIVE)))
        mismatches += len(payloads) != 1
    report(2, mismatches == 0, f"1000 readings x {len(CONNECTION_PATTERNS)} patterns, "
                               f"{mismatches} payload mismatches")


# 3 -----------------------------------------------------------------------------

def _queries():
    for kind in ViewKind:
        for tenant in ("a", "b"):
            for device in (None, "d0", "d1", "d2"):
                for sensor in (None, "s0", "s1"):
                    yield ViewQuery(kind, tenant, device, sensor)


def test_criterion_3_lambda_correctness(report):
    rng = random.Random(3)
    bad = []
    checked = 0
    for inst in range(1000):
        bucket = rng.choice([1, 5, 50]) * 1_000_000
        recs = [Measurement(rng.choice("ab"), f"d{rng.randrange(3)}", f"s{rng.randrange(2)}",
                            rng.randrange(0, 200) * 1_000_000,
                            rng.choice([rng.uniform(-1e3, 1e3), 1e15, -1e15, 0.1]), "u")
                for _ in range(rng.randrange(0, 40))]
        cuts = sorted(rng.sample(range(len(recs) + 1), min(len(recs) + 1, rng.randrange(0, 4))))
        lp = LambdaPipeline(bucket_us=bucket)
        for i, m in enumerate(recs):
            if i in cuts:
                lp.batch_recompute()
            lp.fork_ingest(m)
        queries = list(_queries()) + [ViewQuery(k, "a", bucket=b) for k in ViewKind for b in range(3)]
        for q in queries:
            got, want = lp.serve(q), fold_query(recs, q, bucket)
            checked += 1
            if q.kind is ViewKind.MEAN and got is not None and want is not None:
                good = abs(got - want) <= 1e-9 * abs(want)
            else:
                good = got == want
            if not good:
                bad.append((inst, q, got, want))
    report(3, not bad, f"1000 instances, {checked} queries, {len(bad)} oracle mismatches")


# 4 -----------------------------------------------------------------------------

def test_criterion_4_throughput(report):
    rep = throughput_harness(SMALL_PLANT_RATE, 60.0)
    ratio = rep.achieved_bytes_per_s / FLEET_TARGET_RATE
    report(4, rep.sustained, f"{SMALL_PLANT_RATE / 1e6:.1f} MB/s for 60 s, {rep.records} records, "
                             f"final-30 s window max depths {rep.window_max_depth} [{rep.backend}]; "
                             f"fleet target {FLEET_TARGET_RATE / 1e6:.0f} MB/s vs measured capacity "
                             f"{rep.achieved_bytes_per_s / 1e6:.0f} MB/s ({ratio:.1f}x, not asserted)")


# 5 -----------------------------------------------------------------------------

def _trace(rng):
    t, out = 0, []
    while len(out) < 30:
        t += rng.choice([0, 1, 15, 30, 45, 90, 150, 400, 720]) * 60_000_000
        if t > 2 * 86_400_000_000:
            break
        if not out or out[-1][0] != t:
            out.append((t, rng.choice(list(MotionState))))
    return out


def test_criterion_5_battery_lifetime(report):
    years = lifetime_years(estimate_lifetime(WATER_METER, EnergyModel()))
    payload_ok = payload_check(WATER_METER, 99) is PayloadCheck.OK
    rng = random.Random(5)
    mono_fail = 0
    for _ in range(2000):
        n, cost, idle, budget = rng.randrange(0, 200), rng.uniform(0.1, 50), rng.uniform(0.1, 10), rng.uniform(1, 1e6)

        def life(n_, c_, b_):
            return estimate_lifetime(MessagingPolicy(PolicyKind.FIXED_DAILY, messages_per_day=n_),
                                     EnergyModel(b_, c_, idle))
        base = life(n, cost, budget)
        mono_fail += not (life(n + rng.randrange(1, 50), cost, budget) <= base
                          and life(n, cost * 1.5, budget) <= base
                          and life(n, cost, budget * 1.5) >= base)
    trace_fail = 0
    for _ in range(100):
        trace = _trace(rng)
        got = [(s.time_us, s.reason) for s in next_transmissions(FREIGHT_WAGON, trace, 2 * 86_400_000_000)]
        trace_fail += got != stepped_schedule(FREIGHT_WAGON, trace, 2 * 24 * 60)
    ok = 4.5 <= years <= 5.5 and payload_ok and mono_fail == 0 and trace_fail == 0
    report(5, ok, f"water meter {years:.2f} years, 99 B payload ok={payload_ok}, "
                  f"{mono_fail} monotonicity failures, {trace_fail}/100 schedule mismatches")


# 6 -----------------------------------------------------------------------------

def _forest(rng):
    p = Platform()
    ids = []
    for root in range(3):
        ids.append(p.create_tenant(None, True, tenant_id=f"op{root}"))
        for c in range(rng.randrange(1, 4)):
            cust = p.create_tenant(f"op{root}", True, tenant_id=f"op{root}.c{c}")
            ids.append(cust)
            for s in range(rng.randrange(1, 3)):
                ids.append(p.create_tenant(cust, False, tenant_id=f"{cust}.s{s}"))
    for t in ids:
        p.tenants.check_forest()
        for d in range(2):
            dev = p.register_device(t, [SensorSpec("x", "u"), SensorSpec("y", "u")], device_id=f"{t}/d{d}")
            p.activate(dev)
            for k in range(3):
                p.ingest(Measurement(t, dev, "xy"[k % 2], k, float(k), "u"))
    return p, ids


def _depth(p, t):
    return len(p.tenants.ancestors(t)) + 1


def test_criterion_6_tenancy_isolation(report):
    rng = random.Random(6)
    leaks = queries = grant_errors = 0
    max_depth = 0
    while queries < 10_000:
        p, ids = _forest(rng)
        max_depth = max(max_depth, max(_depth(p, t) for t in ids))
        for _ in range(200):
            viewer = rng.choice(ids)
            flt = MeasurementFilter(sensor_id=rng.choice([None, "x", "y"]))
            leaks += sum(m.tenant_id != viewer for m in p.query(viewer, flt))
            queries += 1
        owner, grantee = rng.sample(ids, 2)
        scope = Scope(f"{owner}/d{rng.randrange(2)}", rng.choice([None, "x"]))
        p.tenants.grant(owner, grantee, scope)
        seen = {repr(m) for m in p.query(grantee) if m.tenant_id == owner}
        want = {repr(m) for m in p.query(owner) if scope.covers(m.device_id, m.sensor_id)}
        grant_errors += seen != want
    ok = leaks == 0 and grant_errors == 0 and max_depth >= 3
    report(6, ok, f"{queries} queries over forests of depth {max_depth}: {leaks} leaks, "
                  f"{grant_errors} grant-scope mismatches")


# 7 -----------------------------------------------------------------------------

def test_criterion_7_api_gateway(report):
    rng = random.Random(7)
    med = MediationGateway()
    med.register(ApiDescriptor("telemetry", Layer.SYSTEM, "b"))
    med.register(ApiDescriptor("orders", Layer.PROCESS, "b", rate_limit=(3, 500_000)))
    med.bind_backend("b", lambda params: {"ok": 1})
    gw = ApiGateway(med)
    limits = {}
    for k in range(8):
        n, w = rng.randint(1, 10), rng.choice([100_000, 1_000_000, 2_000_000])
        limits[f"k{k}"] = (n, w)
        gw.add_key(ApiKey.issue(f"k{k}", f"secret{k}", {"telemetry", "orders"}, (n, w)))
    now = 0
    for _ in range(10_000):
        now += rng.randrange(0, 20_000)
        k = rng.randrange(8)
        gw.handle_request(Request(f"k{k}:secret{k}", rng.choice(["telemetry", "orders"])), now)
    violations = sum(len(overfull_windows(gw.admitted_times(key), n, w)) for key, (n, w) in limits.items())
    per_api = [t for t, key, api, _, adm in gw.log if key == "k0" and api == "orders" and adm]
    violations += len(overfull_windows(per_api, 3, 500_000))

    codes = (gw.handle_request(Request("nobody:x", "telemetry"), now + 1).denial,
             gw.handle_request(Request("k0:secret0", "billing"), now + 2).denial)
    tight = ApiGateway(med)
    tight.add_key(ApiKey.issue("t", "s", {"telemetry"}, (1, 1_000_000)))
    tight.handle_request(Request("t:s", "telemetry"), 0)
    codes += (tight.handle_request(Request("t:s", "telemetry"), 1).denial,)
    distinct = codes == (Denial.AUTH_FAILED, Denial.FORBIDDEN, Denial.RATE_LIMITED)

    e2e = read_summary(run_file("e2e_full").csv_text)
    dmz = int(e2e["api.dmz_violations"])
    ok = violations == 0 and distinct and dmz == 0 and int(e2e["api.rate_limit_violations"]) == 0
    report(7, ok, f"{len(gw.log)} requests, {violations} window violations; denial codes "
                  f"{'/'.join(c.value for c in codes)}; e2e_full DMZ violations {dmz}")


# 8 -----------------------------------------------------------------------------

def test_criterion_8_determinism(report):
    names = list_scenarios()
    differing = [n for n in names if run_file(n).csv_text != run_file(n).csv_text]
    report(8, len(names) >= 5 and not differing,
           f"{len(names)} built-in scenarios run twice, differing: {differing or 'none'}")
