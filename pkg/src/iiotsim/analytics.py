"""Streaming analytics at a configurable tier, plus the paint-station simulation.

Robots sample two sensors on their duty cycle. The station controller
forwards the latest value per robot and sensor every uplink interval to the
analytics node, which evaluates window rules and sends STOP straight back to
the offending robot. Reaction latency is measured from fault injection to
command arrival at the robot.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from collections import deque
from dataclasses import dataclass, field

from iiotsim import detect
from iiotsim.model import (
    Command,
    CommandVerb,
    LatencyBudget,
    Measurement,
    OriginPattern,
    encode_measurement,
    format_value,
    quantize_value,
)
from iiotsim.netsim import EdgeTier, Event, Link, Network, Scheduler, substream

SENSORS = ("nozzle_pressure", "paint_flow")
UNITS = {"nozzle_pressure": "bar", "paint_flow": "l/min"}
NOMINAL = {"nozzle_pressure": 4.0, "paint_flow": 1.0}
NOISE = {"nozzle_pressure": 0.05, "paint_flow": 0.02}


class FaultKind(str, enum.Enum):
    CLOG = "CLOG"  # nozzle pressure collapses, then keeps decaying
    SUPPLY = "SUPPLY"  # paint flow drops


# -- station model ------------------------------------------------------------------

@dataclass
class Robot:
    robot_id: str
    fault_injected_at_us: int | None = None
    fault_kind: FaultKind | None = None
    fault_id: int | None = None
    stopped: bool = False


def _noise(seed: int, robot: int, sensor: int, k: int) -> float:
    h = hashlib.blake2b(struct.pack(">qiiq", seed, robot, sensor, k), digest_size=8).digest()
    return int.from_bytes(h, "big") / 2**64 * 2.0 - 1.0


class PaintStation:
    def __init__(self, robot_count: int = 8, duty_cycle_us: int = 10_000, seed: int = 0):
        if not 6 <= robot_count <= 12:
            raise ValueError("robot_count must lie in [6, 12]")
        if duty_cycle_us <= 0:
            raise ValueError("duty cycle must be positive")
        self.duty_cycle_us = duty_cycle_us
        self.seed = seed
        self.robots = [Robot(f"r{i:02d}") for i in range(robot_count)]

    @property
    def robot_count(self) -> int:
        return len(self.robots)

    def sample(self, idx: int, sensor: str, k: int) -> float:
        """Value of sample ``k`` (taken at ``k * duty_cycle_us``)."""
        robot = self.robots[idx]
        t = k * self.duty_cycle_us
        if robot.stopped:
            return 0.0
        s = SENSORS.index(sensor)
        base = NOMINAL[sensor] + NOISE[sensor] * _noise(self.seed, idx, s, k)
        f = robot.fault_injected_at_us
        if f is not None and t >= f:
            elapsed_s = (t - f) / 1e6
            if robot.fault_kind is FaultKind.CLOG and sensor == "nozzle_pressure":
                base = 2.4 - 0.5 * elapsed_s + NOISE[sensor] * _noise(self.seed, idx, s, k)
            elif robot.fault_kind is FaultKind.SUPPLY and sensor == "paint_flow":
                base = 0.1 + NOISE[sensor] * _noise(self.seed, idx, s, k)
        return quantize_value(base)

    def latest_sample(self, idx: int, sensor: str, now_us: int) -> tuple[int, float]:
        """Latest-value-wins downsampling of the duty-cycle stream at ``now_us``."""
        k = now_us // self.duty_cycle_us
        return k * self.duty_cycle_us, self.sample(idx, sensor, k)

    def full_trace(self, idx: int, sensor: str, t0_us: int, t1_us: int) -> list[tuple[int, float]]:
        k0 = -(-t0_us // self.duty_cycle_us)
        k1 = t1_us // self.duty_cycle_us
        return [(k * self.duty_cycle_us, self.sample(idx, sensor, k)) for k in range(k0, k1 + 1)]


@dataclass(frozen=True)
class Reading:
    robot_id: str
    sensor_id: str
    sample_us: int
    value: float
    running: bool = True


@dataclass(frozen=True)
class TickMessage:
    tick_us: int
    readings: tuple[Reading, ...]

    def encode(self) -> bytes:
        parts = [f"TICK|{self.tick_us}|{len(self.readings)}"]
        for r in self.readings:
            parts.append(f"{r.robot_id}|{r.sensor_id}|{r.sample_us}|{format_value(r.value)}|"
                         f"{'R' if r.running else 'S'}")
        return ("\n".join(parts) + "\n").encode()

    @classmethod
    def decode(cls, blob: bytes) -> TickMessage:
        lines = blob.decode().splitlines()
        _, tick, n = lines[0].split("|")
        readings = []
        for ln in lines[1:]:
            robot, sensor, t, v, st = ln.split("|")
            readings.append(Reading(robot, sensor, int(t), float(v), st == "R"))
        if len(readings) != int(n):
            raise ValueError("truncated tick message")
        return cls(int(tick), tuple(readings))


def controller_tick(station: PaintStation, now_us: int) -> TickMessage:
    readings = []
    for idx, robot in enumerate(station.robots):
        for sensor in SENSORS:
            t, v = station.latest_sample(idx, sensor, now_us)
            readings.append(Reading(robot.robot_id, sensor, t, v, not robot.stopped))
    return TickMessage(now_us, tuple(readings))


# -- rules -------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowRule:
    rule_id: str
    sensor_id: str
    detector: detect.Detector
    op: detect.Comparison
    bound: float
    window_len: int = 1
    action: CommandVerb = CommandVerb.STOP

    def __post_init__(self) -> None:
        if self.window_len <= 0:
            raise ValueError("window_len must be > 0")


def process_window(rule: WindowRule, times_us: list[int], values: list[float]) -> bool:
    """True when the rule fires over this (non-empty) window."""
    if not values:
        raise ValueError("window must be non-empty")
    return detect.fires(rule.detector, rule.op, rule.bound, times_us, values)


DEFAULT_RULES = (
    WindowRule("low-pressure", "nozzle_pressure", detect.Detector.THRESHOLD,
               detect.Comparison.BELOW, 3.0),
    WindowRule("flow-drop", "paint_flow", detect.Detector.MEAN_THRESHOLD,
               detect.Comparison.BELOW, 0.75, window_len=3),
)


# -- placement -----------------------------------------------------------------------

@dataclass(frozen=True)
class PlacementProfile:
    """Path parameters around the analytics node, up from the controller and down to robots."""

    tier: EdgeTier
    uplink_latency_us: int
    downlink_latency_us: int
    eval_us: int = 5_000
    ingest_queue_us: int = 0
    dispatch_queue_us: int = 0
    bandwidth_bytes_per_s: float = 12_500_000.0
    jitter_us: int = 0


# Scenario defaults, not field data.
PLACEMENTS: dict[EdgeTier, PlacementProfile] = {
    EdgeTier.FACTORY_EDGE: PlacementProfile(EdgeTier.FACTORY_EDGE, 2_000, 3_000),
    EdgeTier.REGIONAL_EDGE: PlacementProfile(EdgeTier.REGIONAL_EDGE, 20_000, 20_000,
                                             ingest_queue_us=10_000,
                                             bandwidth_bytes_per_s=6_250_000.0, jitter_us=2_000),
    EdgeTier.CLOUD: PlacementProfile(EdgeTier.CLOUD, 150_000, 150_000, ingest_queue_us=100_000,
                                     dispatch_queue_us=100_000,
                                     bandwidth_bytes_per_s=1_250_000.0, jitter_us=20_000),
}


@dataclass(frozen=True)
class ReactionRecord:
    fault_id: int
    robot_id: str
    injected_us: int
    command_arrival_us: float
    deadline_us: int

    @property
    def latency_us(self) -> float:
        return self.command_arrival_us - self.injected_us

    @property
    def deadline_met(self) -> bool:
        return self.latency_us < self.deadline_us


@dataclass(frozen=True)
class FaultSpec:
    robot: int
    at_us: int
    kind: FaultKind = FaultKind.CLOG


def fault_schedule(n: int, robot_count: int, start_us: int, spacing_us: int, tick_us: int,
                   seed: int) -> list[FaultSpec]:
    """Round-robin faults with seeded phase offsets inside the tick interval."""
    rng = substream(seed, "faults")
    kinds = list(FaultKind)
    out = []
    for i in range(n):
        offset = rng.randrange(1, tick_us)
        out.append(FaultSpec(i % robot_count, start_us + i * spacing_us + offset,
                             kinds[i % len(kinds)]))
    return out


# -- aggregation -----------------------------------------------------------------------

@dataclass(frozen=True)
class AggregateRecord:
    tenant_id: str
    device_id: str
    sensor_id: str
    period_end_us: int
    count: int
    min: float
    max: float
    mean: float
    unit: str

    def encode(self) -> bytes:
        return (f"AGG|{self.tenant_id}|{self.device_id}|{self.sensor_id}|{self.period_end_us}|"
                f"{self.count}|{format_value(self.min)}|{format_value(self.max)}|{self.mean!r}|"
                f"{self.unit}\n").encode()

    @classmethod
    def decode(cls, line: bytes) -> AggregateRecord:
        tag, tenant, device, sensor, ts, count, lo, hi, mean, unit = line.decode().rstrip("\n").split("|")
        if tag != "AGG":
            raise ValueError("not an AGG line")
        return cls(tenant, device, sensor, int(ts), int(count), float(lo), float(hi), float(mean),
                   unit)

    def measurements(self) -> list[Measurement]:
        """Synthetic aggregate sensors as ingested by the platform."""
        base = dict(tenant_id=self.tenant_id, device_id=self.device_id,
                    timestamp_us=self.period_end_us, origin_pattern=OriginPattern.NATIVE)
        return [
            Measurement(sensor_id=f"{self.sensor_id}.count", value=float(self.count), unit="1", **base),
            Measurement(sensor_id=f"{self.sensor_id}.min", value=self.min, unit=self.unit, **base),
            Measurement(sensor_id=f"{self.sensor_id}.max", value=self.max, unit=self.unit, **base),
            Measurement(sensor_id=f"{self.sensor_id}.mean", value=self.mean, unit=self.unit, **base),
        ]


def aggregate_sensor_ids(robot_ids: list[str]) -> list[str]:
    return [f"{r}.{s}.{stat}" for r in robot_ids for s in SENSORS
            for stat in ("count", "min", "max", "mean")]


class Aggregator:
    """Per-sensor count/min/max/mean over an uplink period."""

    def __init__(self, tenant_id: str, device_id: str, period_us: int, uplink_interval_us: int):
        if period_us <= uplink_interval_us:
            raise ValueError("aggregation period must exceed the uplink interval")
        self.tenant_id = tenant_id
        self.device_id = device_id
        self.period_us = period_us
        self._values: dict[str, list[float]] = {}
        self._pending_raw = 0
        # byte totals cover flushed periods only
        self.raw_bytes = 0
        self.agg_bytes = 0

    def add(self, reading: Reading, tick_us: int) -> None:
        key = f"{reading.robot_id}.{reading.sensor_id}"
        self._values.setdefault(key, []).append(reading.value)
        raw = Measurement(self.tenant_id, reading.robot_id, reading.sensor_id, tick_us,
                          reading.value, UNITS[reading.sensor_id])
        self._pending_raw += len(encode_measurement(raw))

    def flush(self, period_end_us: int) -> list[AggregateRecord]:
        out = []
        for key in sorted(self._values):
            vals = self._values[key]
            if not vals:
                continue
            sensor = key.split(".", 1)[1]
            rec = AggregateRecord(self.tenant_id, self.device_id, key, period_end_us, len(vals),
                                  min(vals), max(vals), math.fsum(vals) / len(vals), UNITS[sensor])
            self.agg_bytes += len(rec.encode())
            out.append(rec)
        self._values.clear()
        self.raw_bytes += self._pending_raw
        self._pending_raw = 0
        return out


def uplink_aggregates(readings: list[tuple[int, Reading]], tenant_id: str, device_id: str,
                      period_us: int, uplink_interval_us: int = 200_000) -> list[AggregateRecord]:
    """Summarise (tick_us, reading) pairs into one record per sensor per period."""
    agg = Aggregator(tenant_id, device_id, period_us, uplink_interval_us)
    out: list[AggregateRecord] = []
    if not readings:
        return out
    boundary = (readings[0][0] // period_us + 1) * period_us
    for tick, r in readings:
        while tick >= boundary:
            out.extend(agg.flush(boundary))
            boundary += period_us
        agg.add(r, tick)
    out.extend(agg.flush(boundary))
    return out


# -- simulation ------------------------------------------------------------------------

@dataclass
class PaintStationConfig:
    robot_count: int = 8
    duty_cycle_us: int = 10_000
    uplink_interval_us: int = 200_000
    reaction_deadline_us: int = 500_000
    placement: EdgeTier = EdgeTier.FACTORY_EDGE
    profile: PlacementProfile | None = None
    rules: tuple[WindowRule, ...] = DEFAULT_RULES
    fault_count: int = 60
    fault_start_us: int = 2_000_000
    fault_spacing_us: int = 2_000_000
    faults: list[FaultSpec] | None = None
    repair_delay_us: int = 5_000_000
    aggregate_period_us: int = 60_000_000
    tenant_id: str = "paint-shop"
    edge_device_id: str = "paint-edge"
    seed: int = 0
    duration_us: int | None = None

    def __post_init__(self) -> None:
        LatencyBudget(self.duty_cycle_us / 1000, self.reaction_deadline_us / 1000,
                      self.uplink_interval_us / 1000)

    def resolved_profile(self) -> PlacementProfile:
        return self.profile or PLACEMENTS[EdgeTier(self.placement)]

    def resolved_faults(self) -> list[FaultSpec]:
        if self.faults is not None:
            return list(self.faults)
        return fault_schedule(self.fault_count, self.robot_count, self.fault_start_us,
                              self.fault_spacing_us, self.uplink_interval_us, self.seed)


@dataclass
class PaintStationResult:
    records: list[ReactionRecord]
    path_bound_us: int
    ticks: int
    aggregates: list[AggregateRecord]
    raw_bytes: int
    agg_bytes: int
    false_stops: int
    trace_hash: str
    received: list[tuple[int, Reading]] = field(default_factory=list, repr=False)

    @property
    def deadline_met_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.deadline_met for r in self.records) / len(self.records)

    @property
    def max_latency_us(self) -> float:
        return max((r.latency_us for r in self.records), default=0.0)

    @property
    def min_latency_us(self) -> float:
        return min((r.latency_us for r in self.records), default=0.0)


class AnalyticsEngine:
    """Rule evaluation with one STOP per fault episode per robot."""

    ARMED, COMMANDED, HALTED = range(3)

    def __init__(self, rules: tuple[WindowRule, ...]):
        self.rules = tuple(sorted(rules, key=lambda r: r.rule_id))
        self._win: dict[tuple[str, str], deque[tuple[int, float]]] = {}
        self._state: dict[str, int] = {}
        self.fired = 0

    def on_tick(self, msg: TickMessage) -> list[tuple[str, WindowRule]]:
        by_robot: dict[str, list[Reading]] = {}
        for r in msg.readings:
            by_robot.setdefault(r.robot_id, []).append(r)
        out = []
        for robot_id in sorted(by_robot):
            readings = by_robot[robot_id]
            running = all(r.running for r in readings)
            state = self._state.get(robot_id, self.ARMED)
            if not running:
                self._state[robot_id] = self.HALTED
                continue
            if state == self.HALTED:
                self._state[robot_id] = state = self.ARMED
                for rule in self.rules:
                    self._win.pop((robot_id, rule.rule_id), None)
            for rule in self.rules:
                for r in readings:
                    if r.sensor_id != rule.sensor_id:
                        continue
                    win = self._win.setdefault((robot_id, rule.rule_id),
                                               deque(maxlen=rule.window_len))
                    win.append((r.sample_us, r.value))
            if state != self.ARMED:
                continue
            for rule in self.rules:
                win = self._win.get((robot_id, rule.rule_id))
                if not win:
                    continue
                if process_window(rule, [t for t, _ in win], [v for _, v in win]):
                    self._state[robot_id] = self.COMMANDED
                    self.fired += 1
                    out.append((robot_id, rule))
                    break
        return out


def run_paint_station(cfg: PaintStationConfig, sink=None) -> PaintStationResult:
    """Simulate the station; ``sink(measurement)`` receives expanded aggregates."""
    prof = cfg.resolved_profile()
    faults = cfg.resolved_faults()
    sched = Scheduler(cfg.seed, keep_trace=False)
    net = Network(sched)
    station = PaintStation(cfg.robot_count, cfg.duty_cycle_us, cfg.seed)
    engine = AnalyticsEngine(cfg.rules)
    aggregator = Aggregator(cfg.tenant_id, cfg.edge_device_id, cfg.aggregate_period_us,
                            cfg.uplink_interval_us)
    aggregates: list[AggregateRecord] = []
    received: list[tuple[int, Reading]] = []

    net.add_node("controller", EdgeTier.GATEWAY)
    net.add_node("analytics", prof.tier)
    net.add_link(Link("controller", "analytics", prof.uplink_latency_us, prof.bandwidth_bytes_per_s,
                      0.0, prof.jitter_us))
    idx_of = {}
    for i, robot in enumerate(station.robots):
        idx_of[robot.robot_id] = i
        net.add_node(robot.robot_id, EdgeTier.DEVICE)
        net.add_link(Link("analytics", robot.robot_id, prof.downlink_latency_us,
                          prof.bandwidth_bytes_per_s, 0.0, prof.jitter_us))

    records: dict[int, ReactionRecord] = {}
    injected: dict[int, FaultSpec] = {}
    false_stops = 0
    max_tick_bytes = 0
    max_cmd_bytes = 0
    ticks = 0

    def on_command(ev: Event) -> None:
        nonlocal false_stops
        cmd = Command.decode(ev.payload)
        robot = station.robots[idx_of[cmd.device_id]]
        if robot.fault_id is None or robot.fault_id in records:
            false_stops += 1
            robot.stopped = True
        else:
            fid = robot.fault_id
            records[fid] = ReactionRecord(fid, robot.robot_id, robot.fault_injected_at_us,
                                          ev.fire_at_us, cfg.reaction_deadline_us)
            robot.stopped = True
        sched.call_later(cfg.repair_delay_us, robot.robot_id, repair, meta=robot.robot_id)

    def repair(ev: Event) -> None:
        robot = station.robots[idx_of[ev.meta]]
        if robot.fault_id is not None and robot.fault_id not in records:
            return
        robot.stopped = False
        robot.fault_injected_at_us = None
        robot.fault_kind = None
        robot.fault_id = None

    def dispatch(ev: Event) -> None:
        nonlocal max_cmd_bytes
        robot_id = ev.meta
        cmd = Command(robot_id, CommandVerb.STOP, ev.fire_at_us, {"rule": ev.payload.decode()},
                      ev.fire_at_us + cfg.reaction_deadline_us)
        blob = cmd.encode()
        max_cmd_bytes = max(max_cmd_bytes, len(blob))
        net.send("analytics", robot_id, blob, kind="cmd", on_deliver=on_command)

    def evaluate(ev: Event) -> None:
        msg = TickMessage.decode(ev.payload)
        for r in msg.readings:
            if r.running:
                received.append((msg.tick_us, r))
                aggregator.add(r, msg.tick_us)
        for robot_id, rule in engine.on_tick(msg):
            sched.call_later(prof.dispatch_queue_us, "analytics", dispatch,
                             payload=rule.rule_id.encode(), kind="dispatch", meta=robot_id)

    def on_analytics(ev: Event) -> None:
        sched.call_later(prof.ingest_queue_us + prof.eval_us, "analytics", evaluate,
                         payload=ev.payload, kind="eval")

    def tick(ev: Event) -> None:
        nonlocal max_tick_bytes, ticks
        ticks += 1
        blob = controller_tick(station, ev.fire_at_us).encode()
        max_tick_bytes = max(max_tick_bytes, len(blob))
        net.send("controller", "analytics", blob, kind="tick", on_deliver=on_analytics)
        sched.call_later(cfg.uplink_interval_us, "controller", tick, kind="tick-timer")

    def inject(ev: Event) -> None:
        fid = ev.meta
        spec = injected[fid]
        robot = station.robots[spec.robot]
        if robot.fault_id is not None or robot.stopped:
            # robot still down from an earlier fault; record as missed
            records[fid] = ReactionRecord(fid, robot.robot_id, ev.fire_at_us, math.inf,
                                          cfg.reaction_deadline_us)
            return
        robot.fault_injected_at_us = ev.fire_at_us
        robot.fault_kind = spec.kind
        robot.fault_id = fid

    def flush(ev: Event) -> None:
        recs = aggregator.flush(ev.fire_at_us)
        aggregates.extend(recs)
        if sink is not None:
            for rec in recs:
                for m in rec.measurements():
                    sink(m)
        sched.call_later(cfg.aggregate_period_us, "analytics", flush, kind="agg")

    for fid, spec in enumerate(faults):
        injected[fid] = spec
        sched.schedule(spec.at_us, station.robots[spec.robot].robot_id, inject, kind="fault",
                       meta=fid)
    sched.schedule(0, "controller", tick, kind="tick-timer")
    sched.schedule(cfg.aggregate_period_us, "analytics", flush, kind="agg")

    last_fault = max((f.at_us for f in faults), default=0)
    end = cfg.duration_us
    if end is None:
        end = last_fault + cfg.uplink_interval_us + 4 * cfg.reaction_deadline_us + 1_000_000
    sched.run_until(end)

    for fid, spec in injected.items():
        if fid not in records:
            records[fid] = ReactionRecord(fid, station.robots[spec.robot].robot_id, spec.at_us,
                                          math.inf, cfg.reaction_deadline_us)

    up = net.link("controller", "analytics")
    down = net.link("analytics", station.robots[0].robot_id)
    path = (up.one_way_latency_us + up.serialization_us(max_tick_bytes) + up.jitter_us
            + prof.ingest_queue_us + prof.eval_us + prof.dispatch_queue_us
            + down.one_way_latency_us + down.serialization_us(max_cmd_bytes) + down.jitter_us)
    return PaintStationResult(
        records=[records[k] for k in sorted(records)],
        path_bound_us=path,
        ticks=ticks,
        aggregates=aggregates,
        raw_bytes=aggregator.raw_bytes,
        agg_bytes=aggregator.agg_bytes,
        false_stops=false_stops,
        trace_hash=sched.trace_hash(),
        received=received,
    )
