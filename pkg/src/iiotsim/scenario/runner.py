"""Run a validated scenario and emit the metrics CSV.

Each section present in the scenario becomes a stage. Stages share one
platform (tenants, devices, rules, lambda pipeline) so a full scenario can
chain fieldbus readings, paint-station aggregates and API calls through
the same middleware. Host timings never reach the CSV; they go to ``notes``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from iiotsim.analytics import aggregate_sensor_ids, run_paint_station
from iiotsim.apimgmt import ApiGateway, Denial, MediationGateway, Request, dmz_violations
from iiotsim.gateway import TRANSLATING_TIER, DeviceContext, Fabric, FabricProfile, TranslationRuleSet
from iiotsim.lambda_arch import (
    FLEET_TARGET_RATE,
    ForkPlacement,
    LambdaPipeline,
    ViewKind,
    ViewQuery,
    throughput_harness,
)
from iiotsim.lowpower import (
    US_PER_DAY,
    MotionState,
    estimate_lifetime,
    lifetime_years,
    next_transmissions,
    payload_check,
)
from iiotsim.model import Measurement
from iiotsim.netsim import EdgeTier, Event, Network, Scheduler, substream
from iiotsim.platform_core import (
    Lifecycle,
    Platform,
    RetentionPolicy,
    RuleAction,
    Scope,
    SensorSpec,
    SmartRule,
)
from iiotsim.scenario.report import AssertionOutcome, build_report, evaluate_asserts, read_summary
from iiotsim.scenario.schema import US, LpwanDevice, Scenario

logger = logging.getLogger(__name__)

RECORD_COLUMNS: dict[str, tuple[str, ...]] = {
    "meas": ("tenant_id", "device_id", "sensor_id", "origin_pattern", "count", "first_us",
             "last_us"),
    "reaction": ("fault_id", "robot_id", "injected_us", "command_arrival_us", "latency_us",
                 "deadline_met"),
    "throughput": ("rate_bytes_per_s", "duration_s", "tick_s", "record_bytes", "records", "bytes",
                   "sustained"),
    "schedule": ("device_id", "send_time_us", "reason"),
    "denial": ("key_id", "api_id", "outcome", "count"),
    "summary": ("metric", "value"),
}


# requested with probability unknown_api_fraction; never registered
RETIRED_API = "retired-report"


def cell(v: Any) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class Metrics:
    """Rows grouped by record type; serialised in the fixed type order."""

    def __init__(self) -> None:
        self.rows: dict[str, list[tuple[str, ...]]] = {k: [] for k in RECORD_COLUMNS}

    def add(self, kind: str, *values: Any) -> None:
        cols = RECORD_COLUMNS[kind]
        if len(values) != len(cols):
            raise ValueError(f"{kind} expects {len(cols)} values, got {len(values)}")
        self.rows[kind].append(tuple(cell(v) for v in values))

    def summary(self, metric: str, value: Any) -> None:
        self.add("summary", metric, value)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for kind, cols in RECORD_COLUMNS.items():
            rows = self.rows[kind]
            if not rows:
                continue
            w.writerow([f"#{kind}", *cols])
            for r in rows:
                w.writerow([kind, *r])
        return buf.getvalue()


@dataclass
class RunResult:
    scenario: Scenario
    csv_text: str
    report: str
    outcomes: list[AssertionOutcome]
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(o.passed for o in self.outcomes)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


class _Run:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.out = Metrics()
        self.notes: list[str] = []
        self.platform: Platform | None = None
        self.pipeline: LambdaPipeline | None = None
        self.fork_before = sc.lambda_fork is ForkPlacement.BEFORE_PLATFORM_EDGE

    # -- shared platform -------------------------------------------------------

    def build_platform(self) -> None:
        sc = self.sc
        if not sc.tenants:
            return
        hot = sc.fleet.hot_window_us if sc.fleet is not None else None
        self.pipeline = LambdaPipeline(placement=sc.lambda_fork)
        fork = None if self.fork_before else self.pipeline.fork_ingest
        p = Platform(RetentionPolicy(hot) if hot else None, fork=fork)
        for t in sc.tenants:
            p.create_tenant(t.parent, t.multi_tenant, t.apps, tenant_id=t.tenant_id)
        for g in sc.grants:
            p.tenants.grant(g.owner, g.grantee, Scope(g.device_id, g.sensor_id))
        for d in sc.devices:
            p.register_device(d.tenant_id,
                              [SensorSpec(s.sensor_id, s.unit, d.period_us // 1000)
                               for s in d.sensors],
                              d.pattern, device_id=d.device_id)
            p.activate(d.device_id)
        paint = sc.paint
        if paint is not None and paint.tenant_id in p.tenants.tenants:
            robots = [f"r{i:02d}" for i in range(paint.robot_count)]
            p.register_device(paint.tenant_id,
                              [SensorSpec(s, "", paint.aggregate_period_us // 1000)
                               for s in aggregate_sensor_ids(robots)],
                              device_id=paint.edge_device_id)
            p.activate(paint.edge_device_id)
        for r in sc.rules:
            p.add_rule(SmartRule(r.rule_id, r.tenant_id, r.sensor_id, r.detector, r.op, r.bound,
                                 r.window, RuleAction(r.action), device_id=r.device_id))
        self.platform = p

    def deliver(self, m: Measurement) -> bool:
        if self.fork_before and self.pipeline is not None:
            self.pipeline.fork_ingest(m)
        return self.platform.ingest(m).accepted

    # -- stages ------------------------------------------------------------------

    def run(self) -> None:
        sc = self.sc
        self.out.summary("scenario.name", sc.name)
        self.out.summary("scenario.seed", sc.seed)
        self.out.summary("scenario.duration_s", sc.duration_us / US)
        self.build_platform()
        if sc.fleet is not None:
            self.stage_fleet()
        if sc.paint is not None:
            self.stage_paint()
        if sc.plant is not None:
            self.stage_plant()
        if sc.throughput is not None:
            self.stage_throughput()
        if sc.lpwan is not None:
            self.stage_lpwan()
        if sc.nodes:
            self.stage_topology()
        if sc.api is not None:
            self.stage_api()
        if self.platform is not None:
            self.stage_platform_totals()

    def stage_fleet(self) -> None:
        sc, spec = self.sc, self.sc.fleet
        sched = Scheduler(sc.seed, keep_trace=False)
        net = Network(sched)
        tally: dict[tuple[str, str, str, str], list[int]] = {}
        worst = 0
        delivered = 0

        def sink(m: Measurement, arrival_us: int) -> None:
            nonlocal worst, delivered
            delivered += 1
            worst = max(worst, arrival_us - m.timestamp_us)
            if self.deliver(m):
                key = (m.tenant_id, m.device_id, m.sensor_id, m.origin_pattern.value)
                row = tally.setdefault(key, [0, m.timestamp_us, m.timestamp_us])
                row[0] += 1
                row[1] = min(row[1], m.timestamp_us)
                row[2] = max(row[2], m.timestamp_us)

        fabric = Fabric(net, sink, FabricProfile(**spec.profile))
        rows = [(d.unit_id, s.register, s.sensor_id, s.scale, s.offset, s.unit)
                for d in sc.devices for s in d.sensors]
        ruleset = TranslationRuleSet.from_rows(spec.ruleset_version, rows)
        for d in sc.devices:
            own = None
            if TRANSLATING_TIER[d.pattern] is EdgeTier.DEVICE:
                own = TranslationRuleSet.from_rows(
                    spec.ruleset_version, [r for r in rows if r[0] == d.unit_id])
            fabric.bind_device(DeviceContext(d.tenant_id, d.device_id, d.pattern), d.unit_id, own)
        fabric.cloud_rules = ruleset
        fabric.push_ruleset(ruleset)

        emitted = 0

        def emitter(d):
            rng = substream(sc.seed, "fleet", d.device_id)

            def fire(ev: Event) -> None:
                nonlocal emitted
                for s in d.sensors:
                    raw = s.raw_base + (rng.randint(-s.raw_spread, s.raw_spread) if s.raw_spread else 0)
                    fabric.emit(d.device_id, s.register, raw)
                    emitted += 1
                nxt = ev.fire_at_us + d.period_us
                if nxt < sc.duration_us:
                    sched.schedule(nxt, d.device_id, fire, kind="sample")
            return fire, spec.start_us + rng.randrange(d.period_us)

        for d in sc.devices:
            fire, first = emitter(d)
            if first < sc.duration_us:
                sched.schedule(first, d.device_id, fire, kind="sample")

        def batch(ev: Event) -> None:
            if self.pipeline is not None:
                self.pipeline.batch_recompute()
            if self.platform.retention is not None:
                self.platform.retention_sweep(ev.fire_at_us)
            nxt = ev.fire_at_us + spec.batch_interval_us
            if nxt <= sc.duration_us:
                sched.schedule(nxt, "cloud", batch, kind="batch")

        sched.schedule(spec.batch_interval_us, "cloud", batch, kind="batch")
        sched.run_until(sc.duration_us)

        for key in sorted(tally):
            self.out.add("meas", *key, *tally[key])
        o = self.out
        o.summary("fleet.devices", len(sc.devices))
        o.summary("fleet.emitted", emitted)
        o.summary("fleet.delivered", delivered)
        o.summary("fleet.accepted", sum(v[0] for v in tally.values()))
        o.summary("fleet.gateway_errors", sum(fabric.errors.values()))
        o.summary("fleet.ruleset_acked_version", max((v for v, _ in fabric.acks), default=0))
        o.summary("fleet.ruleset_ack_us", min((t for _, t in fabric.acks), default=-1))
        o.summary("fleet.max_delivery_latency_us", worst)
        o.summary("fleet.patterns", len({d.pattern for d in sc.devices}))
        o.summary("fleet.trace_hash", sched.trace_hash()[:16])

    def stage_paint(self) -> None:
        cfg = self.sc.paint
        p = self.platform
        sink = None
        if p is not None and cfg.edge_device_id in p.devices:
            sink = self.deliver
        res = run_paint_station(cfg, sink)
        for r in res.records:
            self.out.add("reaction", r.fault_id, r.robot_id, r.injected_us, r.command_arrival_us,
                         r.latency_us, r.deadline_met)
        o = self.out
        bound = cfg.uplink_interval_us + res.path_bound_us
        o.summary("paint.placement", cfg.resolved_profile().tier.name)
        o.summary("paint.robots", cfg.robot_count)
        o.summary("paint.faults", len(res.records))
        o.summary("paint.deadline_us", cfg.reaction_deadline_us)
        o.summary("paint.deadline_met_fraction", res.deadline_met_fraction)
        o.summary("paint.deadline_missed_fraction", 1.0 - res.deadline_met_fraction
                  if res.records else 0.0)
        o.summary("paint.min_latency_us", res.min_latency_us)
        o.summary("paint.max_latency_us", res.max_latency_us)
        o.summary("paint.path_bound_us", res.path_bound_us)
        o.summary("paint.worst_case_bound_us", bound)
        o.summary("paint.max_within_bound", res.max_latency_us <= bound)
        o.summary("paint.false_stops", res.false_stops)
        o.summary("paint.ticks", res.ticks)
        o.summary("paint.aggregates", len(res.aggregates))
        o.summary("paint.raw_bytes", res.raw_bytes)
        o.summary("paint.agg_bytes", res.agg_bytes)
        o.summary("paint.trace_hash", res.trace_hash[:16])

    def stage_plant(self) -> None:
        p = self.sc.plant
        self.out.summary("plant.size_class", p.size_class.value)
        self.out.summary("plant.sensor_count", p.sensor_count)
        self.out.summary("plant.daily_data_gb", p.daily_data_gb)

    def stage_throughput(self) -> None:
        spec = self.sc.throughput
        duration_s = self.sc.duration_us / US
        rep = throughput_harness(spec.rate_bytes_per_s, duration_s, tick_s=spec.tick_s,
                                 n_keys=spec.n_keys, seed=self.sc.seed, keep_master=False)
        self.out.add("throughput", rep.rate_bytes_per_s, rep.duration_s, rep.tick_s,
                     rep.record_bytes, rep.records, rep.bytes, rep.sustained)
        self.out.summary("throughput.sustained", rep.sustained)
        self.out.summary("throughput.records", rep.records)
        self.out.summary("throughput.daily_gb", rep.rate_bytes_per_s * 86_400 / 1e9)
        self.notes.append(rep.summary())
        self.notes.append(f"fleet target {FLEET_TARGET_RATE / 1e6:.0f} MB/s: measured capacity "
                          f"{rep.achieved_bytes_per_s / 1e6:.1f} MB/s "
                          f"({rep.achieved_bytes_per_s / FLEET_TARGET_RATE:.2f}x target)")

    def stage_lpwan(self) -> None:
        spec = self.sc.lpwan
        horizon = spec.horizon_us
        for dev in spec.devices:
            policy = spec.policies[dev.policy]
            trace = dev.trace if dev.trace is not None else _random_trips(self.sc.seed, dev, horizon)
            sends = next_transmissions(policy, trace, horizon)
            for tx in sends:
                self.out.add("schedule", dev.device_id, tx.time_us, tx.reason.value)
            first_day = [(t, s) for t, s in trace if t <= US_PER_DAY]
            days = estimate_lifetime(policy, spec.energy, first_day)
            o = self.out
            o.summary(f"lpwan.{dev.device_id}.sends", len(sends))
            o.summary(f"lpwan.{dev.device_id}.lifetime_days", days)
            o.summary(f"lpwan.{dev.device_id}.lifetime_years", round(lifetime_years(days), 6))
        for pid in sorted(spec.policies):
            ok = payload_check(spec.policies[pid], spec.payload_bytes)
            self.out.summary(f"lpwan.{pid}.payload_check", ok.value)

    def topology(self) -> Network:
        net = Network(Scheduler(self.sc.seed, keep_trace=False))
        for n in self.sc.nodes:
            net.add_node(n.name, n.tier, n.zone)
        for link, both in self.sc.links:
            net.add_link(link, bidirectional=both)
        return net

    def stage_topology(self) -> None:
        net = self.topology()
        self.out.summary("topology.nodes", len(net.nodes))
        self.out.summary("topology.links", len(net.links))

    def stage_api(self) -> None:
        sc, spec = self.sc, self.sc.api
        med = MediationGateway()
        for d in spec.descriptors:
            med.register(d)
        if self.platform is not None:
            med.bind_backend("platform.query", self._platform_backend(spec.tenant_id))
        gw = ApiGateway(med)
        for key, _ in spec.keys:
            gw.add_key(key)

        net = self.topology() if sc.nodes else None
        rng = substream(sc.seed, "api")
        api_ids = [d.api_id for d in spec.descriptors]
        devices = [d.device_id for d in sc.devices] or ["none"]
        via_net = (net is not None and spec.client_node is not None
                   and (spec.client_node, spec.gateway_node) in net.links)
        t = 0
        for _ in range(spec.requests):
            t += max(1, int(rng.expovariate(1.0 / spec.mean_gap_us)))
            if rng.random() < spec.bad_key_fraction:
                presented = "intruder:guess"
            else:
                key, secret = spec.keys[rng.randrange(len(spec.keys))]
                presented = f"{key.key_id}:{secret}"
            if rng.random() < spec.unknown_api_fraction or not api_ids:
                api_id = RETIRED_API
            else:
                api_id = api_ids[rng.randrange(len(api_ids))]
            req = Request(presented, api_id, {"compressor": devices[rng.randrange(len(devices))]})
            if via_net:
                net.send(spec.client_node, spec.gateway_node, req.encode(), now_us=t, kind="req",
                         on_deliver=lambda ev: gw.handle_request(Request.decode(ev.payload),
                                                                 ev.fire_at_us))
            else:
                gw.handle_request(req, t)
        if via_net:
            net.sched.run_until(t + 10 * US)

        tally = Counter((k, a, outcome) for _, k, a, outcome, _ in gw.log)
        for key in sorted(tally):
            self.out.add("denial", *key, tally[key])
        o = self.out
        o.summary("api.requests", len(gw.log))
        o.summary("api.ok", sum(1 for row in gw.log if row[3] == "OK"))
        for d in Denial:
            o.summary(f"api.denied.{d.value}", sum(1 for row in gw.log if row[3] == d.value))
        o.summary("api.rate_limit_violations", _limit_violations(gw, spec))
        if net is not None:
            problems = dmz_violations(net, spec.gateway_node, spec.protected)
            for msg in problems:
                logger.warning("DMZ: %s", msg)
            o.summary("api.dmz_violations", len(problems))

    def _platform_backend(self, tenant_id: str | None):
        p = self.platform

        def backend(params: dict[str, str]) -> dict[str, Any] | None:
            device_id = params.get("compressor")
            dev = p.devices.get(device_id or "")
            if dev is None:
                return None
            if tenant_id is not None and dev.tenant_id not in p.tenants.visible_scopes(tenant_id):
                return None
            latest: dict[str, Any] = {}
            for (_, did, sid), q in sorted(p.hot.items()):
                if did == device_id and q:
                    latest[sid] = q[-1].value
            return latest

        return backend

    def stage_platform_totals(self) -> None:
        p = self.platform
        o = self.out
        o.summary("platform.tenants", len(p.tenants.tenants))
        o.summary("platform.devices", len(p.devices))
        o.summary("platform.active_devices",
                  sum(1 for d in p.devices.values() if d.lifecycle is Lifecycle.ACTIVE))
        o.summary("platform.submitted", p.submitted)
        o.summary("platform.accepted", p.accepted)
        o.summary("platform.rejected", p.total_rejected())
        o.summary("platform.rules_fired", len(p.fired))
        o.summary("platform.offloaded", p.offloaded)
        if self.pipeline is not None:
            served = sum(self.pipeline.serve(ViewQuery(ViewKind.COUNT, t))
                         for t in sorted(p.tenants.tenants))
            expected = p.submitted if self.fork_before else p.accepted
            o.summary("lambda.fork", self.pipeline.placement.value)
            o.summary("lambda.served_count", served)
            o.summary("lambda.checkpoint_seq", self.pipeline.checkpoint_seq)
            o.summary("lambda.count_matches", served == expected)


def _random_trips(seed: int, dev: LpwanDevice, horizon_us: int) -> list[tuple[int, MotionState]]:
    """Seeded trips: each day holds ``random_trips_per_day`` disjoint moving spans."""
    rng = substream(seed, "lpwan", dev.device_id)
    trace: list[tuple[int, MotionState]] = []
    day = 0
    while day * US_PER_DAY < horizon_us and dev.random_trips_per_day:
        slot = US_PER_DAY // dev.random_trips_per_day
        for k in range(dev.random_trips_per_day):
            base = day * US_PER_DAY + k * slot
            start = base + rng.randrange(slot // 2)
            length = rng.randrange(30 * 60 * US, max(30 * 60 * US + 1, slot // 2))
            trace.append((start, MotionState.MOVING))
            trace.append((min(start + length, base + slot - 1), MotionState.STATIONARY))
        day += 1
    return [(t, s) for t, s in trace if t <= horizon_us]


def _limit_violations(gw: ApiGateway, spec) -> int:
    """Windows that admitted more than their limit, counted per key and per key+api."""
    bad = 0
    limits = {key.key_id: key.rate_limit for key, _ in spec.keys}
    api_limits = {d.api_id: d.rate_limit for d in spec.descriptors if d.rate_limit is not None}
    for key_id, (n, w) in sorted(limits.items()):
        bad += _overfull(sorted(t for t, k, _, _, adm in gw.log if k == key_id and adm), n, w)
        for api_id, (an, aw) in sorted(api_limits.items()):
            times = sorted(t for t, k, a, _, adm in gw.log if k == key_id and a == api_id and adm)
            bad += _overfull(times, an, aw)
    return bad


def _overfull(times: list[int], n: int, w: int) -> int:
    bad = 0
    lo = 0
    for hi, t in enumerate(times):
        while times[lo] <= t - w:
            lo += 1
        if hi - lo + 1 > n:
            bad += 1
    return bad


def run_scenario(sc: Scenario) -> RunResult:
    run = _Run(sc)
    run.run()
    text = run.out.to_csv()
    outcomes = evaluate_asserts(read_summary(text), sc.asserts)
    report = build_report(text, outcomes)
    return RunResult(sc, text, report, outcomes, run.notes)
