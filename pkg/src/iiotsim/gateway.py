"""IoT gateway: fieldbus translation under cloud-managed rule sets, plus the
seven connection patterns for attaching endpoints to the platform.

Where the translation agent runs per pattern:

=========================  ===========  ==========================================
pattern                    tier         hop topology
=========================  ===========  ==========================================
PLATFORM_SIDE_AGENT        CLOUD        device -frame-> gw -tunnel-> cloud agent
DEVICE_AGENT, DEVICE_LIBS  DEVICE       device agent -line-> gw (relay) -> cloud
STANDARD_AGENT             GATEWAY      device -frame-> gw agent -line-> cloud
OPC_UA_AGENT               GATEWAY      as STANDARD_AGENT, ``UA`` wire tag
SPECIAL_GATEWAY_AGENT      GATEWAY      as STANDARD_AGENT, ``SGA`` wire tag
HW_INTERCEPT               GATEWAY      device -frame-> bus master; passive tap
                                        at gw -line-> cloud
=========================  ===========  ==========================================

Devices never get a direct cloud link; everything north-bound crosses the gateway.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field, replace

from iiotsim.model import (
    FieldbusFrame,
    FrameError,
    Measurement,
    OriginPattern,
    decode_fieldbus_frame,
    decode_measurement,
    encode_fieldbus_frame,
    encode_measurement,
    quantize_value,
)
from iiotsim.netsim import EdgeTier, Event, Link, Network, Scheduler

logger = logging.getLogger(__name__)

ConnectionPattern = OriginPattern

CONNECTION_PATTERNS: tuple[OriginPattern, ...] = (
    OriginPattern.PLATFORM_SIDE_AGENT,
    OriginPattern.DEVICE_AGENT,
    OriginPattern.DEVICE_LIBS,
    OriginPattern.STANDARD_AGENT,
    OriginPattern.OPC_UA_AGENT,
    OriginPattern.SPECIAL_GATEWAY_AGENT,
    OriginPattern.HW_INTERCEPT,
)

TRANSLATING_TIER: dict[OriginPattern, EdgeTier] = {
    OriginPattern.PLATFORM_SIDE_AGENT: EdgeTier.CLOUD,
    OriginPattern.DEVICE_AGENT: EdgeTier.DEVICE,
    OriginPattern.DEVICE_LIBS: EdgeTier.DEVICE,
    OriginPattern.STANDARD_AGENT: EdgeTier.GATEWAY,
    OriginPattern.OPC_UA_AGENT: EdgeTier.GATEWAY,
    OriginPattern.SPECIAL_GATEWAY_AGENT: EdgeTier.GATEWAY,
    OriginPattern.HW_INTERCEPT: EdgeTier.GATEWAY,
}

_WIRE_TAG = {
    OriginPattern.OPC_UA_AGENT: b"UA|",
    OriginPattern.SPECIAL_GATEWAY_AGENT: b"SGA|",
}


class GatewayError(Exception):
    pass


class UnmappedRegister(GatewayError):
    pass


class MissingAgent(GatewayError):
    pass


class StaleVersion(GatewayError):
    pass


# -- translation rules ----------------------------------------------------------

@dataclass(frozen=True)
class TranslationRule:
    sensor_id: str
    scale: float = 1.0
    offset: float = 0.0
    unit: str = ""


@dataclass(frozen=True)
class TranslationRuleSet:
    version: int
    rules: dict[tuple[int, int], TranslationRule] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, version: int,
                  rows: list[tuple[int, int, str, float, float, str]]) -> TranslationRuleSet:
        rules: dict[tuple[int, int], TranslationRule] = {}
        for unit_id, register, sensor_id, scale, offset, unit in rows:
            key = (int(unit_id), int(register))
            if key in rules:
                raise ValueError(f"duplicate rule key {key}")
            rules[key] = TranslationRule(sensor_id, float(scale), float(offset), unit)
        return cls(int(version), rules)

    def serialize(self) -> bytes:
        lines = [f"RULESET|{self.version}|{len(self.rules)}"]
        for (unit_id, register), r in sorted(self.rules.items()):
            lines.append(f"RULE|{unit_id}|{register}|{r.sensor_id}|{r.scale!r}|{r.offset!r}|{r.unit}")
        return ("\n".join(lines) + "\n").encode()

    @classmethod
    def parse(cls, blob: bytes | str) -> TranslationRuleSet:
        text = blob.decode() if isinstance(blob, (bytes, bytearray)) else blob
        lines = [ln for ln in text.splitlines() if ln]
        head = lines[0].split("|")
        if head[0] != "RULESET" or len(head) != 3:
            raise ValueError("missing RULESET header")
        version, count = int(head[1]), int(head[2])
        rows = []
        for ln in lines[1:]:
            tag, unit_id, register, sensor_id, scale, offset, unit = ln.split("|")
            if tag != "RULE":
                raise ValueError(f"unexpected line {ln!r}")
            rows.append((int(unit_id), int(register), sensor_id, float(scale), float(offset), unit))
        if len(rows) != count:
            raise ValueError(f"RULESET announces {count} rules, got {len(rows)}")
        return cls.from_rows(version, rows)


@dataclass(frozen=True)
class DeviceContext:
    tenant_id: str
    device_id: str
    pattern: OriginPattern = OriginPattern.STANDARD_AGENT


def translate(frame: FieldbusFrame, rules: TranslationRuleSet, now_us: int,
              ctx: DeviceContext) -> Measurement:
    rule = rules.rules.get((frame.unit_id, frame.register))
    if rule is None:
        raise UnmappedRegister(f"unit {frame.unit_id} register {frame.register}")
    value = frame.raw_value * rule.scale + rule.offset
    return Measurement(ctx.tenant_id, ctx.device_id, rule.sensor_id, now_us, value, rule.unit,
                       ctx.pattern)


# -- fieldbus and gateway nodes ---------------------------------------------------

class FieldBus:
    """Shared 2-wire bus: frames reach the master; taps get read-only copies."""

    def __init__(self, sched: Scheduler, name: str, master: Callable[[bytes, int], None],
                 latency_us: int = 1_000):
        self.sched = sched
        self.name = name
        self.master = master
        self.latency_us = latency_us
        self.taps: list[Callable[[bytes, int], None]] = []

    def attach_tap(self, tap: Callable[[bytes, int], None]) -> None:
        self.taps.append(tap)

    def transmit(self, frame: bytes, sampled_us: int | None = None) -> None:
        frame = bytes(frame)
        sampled = self.sched.now_us if sampled_us is None else sampled_us

        def deliver(ev: Event) -> None:
            self.master(frame, ev.fire_at_us)
            for tap in self.taps:
                tap(bytes(frame), sampled)

        self.sched.call_later(self.latency_us, self.name, deliver, payload=frame, kind="bus")


@dataclass
class FabricProfile:
    """Link and processing parameters for a device / gateway / cloud fabric."""

    fieldbus_latency_us: int = 1_000
    fieldbus_bandwidth: float = 11_520.0
    wan_latency_us: int = 40_000
    wan_bandwidth: float = 1_250_000.0
    device_translate_us: int = 500
    gateway_translate_us: int = 200
    gateway_relay_us: int = 50
    cloud_translate_us: int = 200
    cloud_queue_us: int = 50_000


Sink = Callable[[Measurement, int], None]


class Fabric:
    """Field devices behind one gateway, wired to the cloud on a simulated network.

    Every reading ends up at ``sink(measurement, arrival_us)``.
    """

    def __init__(self, network: Network, sink: Sink, profile: FabricProfile | None = None,
                 gateway: str = "gw", cloud: str = "cloud"):
        self.net = network
        self.sched = network.sched
        self.sink = sink
        self.p = profile or FabricProfile()
        self.gateway = gateway
        self.cloud = cloud
        self.gateway_rules: TranslationRuleSet | None = None
        self.cloud_rules: TranslationRuleSet | None = None
        self.device_rules: dict[str, TranslationRuleSet] = {}
        self.bindings: dict[str, tuple[DeviceContext, int]] = {}
        self._by_unit: dict[int, DeviceContext] = {}
        self.bus_master_log: list[bytes] = []
        self.bus: FieldBus | None = None
        self.version_audit: dict[int, int] = {}
        self.errors: dict[str, int] = {"MissingAgent": 0, "UnmappedRegister": 0, "BadFrame": 0}
        self.forwarded = 0
        self.pushed_version = 0
        self.acks: list[tuple[int, int]] = []
        self.stale_arrivals = 0
        network.add_node(gateway, EdgeTier.GATEWAY, handler=self._on_gateway)
        network.add_node(cloud, EdgeTier.CLOUD, handler=self._on_cloud)
        network.add_link(Link(gateway, cloud, self.p.wan_latency_us, self.p.wan_bandwidth),
                         bidirectional=True)

    def bind_device(self, ctx: DeviceContext, unit_id: int,
                    device_rules: TranslationRuleSet | None = None) -> None:
        name = ctx.device_id
        if unit_id in self._by_unit:
            raise GatewayError(f"unit id {unit_id} already bound")
        self.bindings[name] = (ctx, unit_id)
        self._by_unit[unit_id] = ctx
        if device_rules is not None:
            self.device_rules[name] = device_rules
        self.net.add_node(name, EdgeTier.DEVICE)
        self.net.add_link(Link(name, self.gateway, self.p.fieldbus_latency_us,
                               self.p.fieldbus_bandwidth), bidirectional=True)
        if ctx.pattern is OriginPattern.HW_INTERCEPT and self.bus is None:
            self.bus = FieldBus(self.sched, f"{self.gateway}.bus",
                                lambda frame, t: self.bus_master_log.append(frame),
                                self.p.fieldbus_latency_us)
            self.bus.attach_tap(self._on_tap)

    def _translating_rules(self, pattern: OriginPattern, device_id: str) -> TranslationRuleSet | None:
        tier = TRANSLATING_TIER[pattern]
        if tier is EdgeTier.DEVICE:
            return self.device_rules.get(device_id)
        if tier is EdgeTier.GATEWAY:
            return self.gateway_rules
        return self.cloud_rules

    def check_route(self, device_id: str, register: int) -> None:
        """Raise MissingAgent / UnmappedRegister if a reading could not be delivered now."""
        ctx, unit_id = self.bindings[device_id]
        rules = self._translating_rules(ctx.pattern, device_id)
        if rules is None:
            raise MissingAgent(f"{ctx.pattern.value}: no agent at {TRANSLATING_TIER[ctx.pattern].name}")
        if (unit_id, register) not in rules.rules:
            raise UnmappedRegister(f"unit {unit_id} register {register}")

    # device side -----------------------------------------------------------

    def emit(self, device_id: str, register: int, raw_value: int) -> None:
        """Device produces a reading at the current virtual time."""
        ctx, unit_id = self.bindings[device_id]
        frame = encode_fieldbus_frame(unit_id, register, raw_value)
        pattern = ctx.pattern
        if pattern in (OriginPattern.DEVICE_AGENT, OriginPattern.DEVICE_LIBS):
            rules = self.device_rules.get(device_id)
            if rules is None:
                self.errors["MissingAgent"] += 1
                return
            try:
                m = translate(decode_fieldbus_frame(frame), rules, self.sched.now_us, ctx)
            except UnmappedRegister:
                self.errors["UnmappedRegister"] += 1
                return
            line = encode_measurement(m)
            self.sched.call_later(self.p.device_translate_us, device_id,
                                  lambda ev: self.net.send(device_id, self.gateway, line,
                                                           kind="meas"),
                                  kind="agent")
        elif pattern is OriginPattern.HW_INTERCEPT:
            assert self.bus is not None
            self.bus.transmit(frame, self.sched.now_us)
        else:
            # sampling instant rides along as simulator metadata, not frame bytes
            self.net.send(device_id, self.gateway, frame, kind="frame", meta=self.sched.now_us)

    # rule set management -----------------------------------------------------

    @property
    def gateway_version(self) -> int:
        return self.gateway_rules.version if self.gateway_rules is not None else 0

    def apply_ruleset(self, rules: TranslationRuleSet) -> int:
        """Swap the gateway rule set at the current instant."""
        if rules.version <= self.gateway_version:
            raise StaleVersion(f"v{rules.version} <= current v{self.gateway_version}")
        self.gateway_rules = rules
        return rules.version

    def push_ruleset(self, rules: TranslationRuleSet) -> int:
        """Send a rule set from the cloud to the gateway; the ack comes back over the WAN."""
        if rules.version <= max(self.pushed_version, self.gateway_version):
            raise StaleVersion(f"v{rules.version} already superseded")
        self.pushed_version = rules.version
        self.net.send(self.cloud, self.gateway, rules.serialize(), kind="ruleset")
        return rules.version

    # gateway ----------------------------------------------------------------

    def _translate_at_gateway(self, frame_bytes: bytes, ctx: DeviceContext, sampled_us: int) -> None:
        try:
            frame = decode_fieldbus_frame(frame_bytes)
        except FrameError:
            self.errors["BadFrame"] += 1
            return
        rules = self.gateway_rules
        if rules is None:
            self.errors["MissingAgent"] += 1
            return
        self.version_audit[rules.version] = self.version_audit.get(rules.version, 0) + 1
        try:
            m = translate(frame, rules, sampled_us, ctx)
        except UnmappedRegister:
            self.errors["UnmappedRegister"] += 1
            return
        line = _WIRE_TAG.get(ctx.pattern, b"") + encode_measurement(m)
        self.sched.call_later(self.p.gateway_translate_us, self.gateway,
                              lambda ev: self._north(line), kind="agent")

    def _north(self, line: bytes) -> None:
        self.forwarded += 1
        self.net.send(self.gateway, self.cloud, line, kind="meas")

    def _on_gateway(self, ev: Event) -> None:
        payload = ev.payload
        if ev.kind == "frame":
            ctx, _ = self.bindings[ev.source_node]
            sampled = ev.meta if ev.meta is not None else ev.fire_at_us
            if ctx.pattern is OriginPattern.PLATFORM_SIDE_AGENT:
                tunnel = f"FRAME|{ctx.device_id}|{sampled}|".encode() + payload.hex().encode() + b"\n"
                self.sched.call_later(self.p.gateway_relay_us, self.gateway,
                                      lambda e: self._north(tunnel), kind="relay")
            else:
                self._translate_at_gateway(payload, ctx, sampled)
        elif ev.kind == "meas":
            self.sched.call_later(self.p.gateway_relay_us, self.gateway,
                                  lambda e: self._north(payload), kind="relay")
        elif ev.kind == "ruleset":
            rules = TranslationRuleSet.parse(payload)
            try:
                version = self.apply_ruleset(rules)
            except StaleVersion:
                self.stale_arrivals += 1
                return
            self.net.send(self.gateway, self.cloud, f"ACK|{version}\n".encode(), kind="ack")

    def _on_tap(self, frame: bytes, sampled_us: int) -> None:
        try:
            unit_id = decode_fieldbus_frame(frame).unit_id
        except FrameError:
            self.errors["BadFrame"] += 1
            return
        ctx = self._by_unit.get(unit_id)
        if ctx is None:
            return
        self._translate_at_gateway(frame, ctx, sampled_us)

    # cloud ------------------------------------------------------------------

    def _on_cloud(self, ev: Event) -> None:
        payload = ev.payload
        if ev.kind == "ack":
            self.acks.append((int(payload.decode().split("|")[1]), ev.fire_at_us))
            return
        if payload.startswith(b"FRAME|"):
            _, device_id, sampled, hexframe = payload.decode().rstrip("\n").split("|")
            ctx, _ = self.bindings[device_id]

            def agent(e: Event) -> None:
                rules = self.cloud_rules
                if rules is None:
                    self.errors["MissingAgent"] += 1
                    return
                try:
                    m = translate(decode_fieldbus_frame(bytes.fromhex(hexframe)), rules,
                                  int(sampled), ctx)
                except UnmappedRegister:
                    self.errors["UnmappedRegister"] += 1
                    return
                # the cloud agent skips the wire, so round as the line codec would
                self.sink(replace(m, value=quantize_value(m.value)), e.fire_at_us)

            self.sched.call_later(self.p.cloud_queue_us + self.p.cloud_translate_us, self.cloud,
                                  agent, kind="agent")
            return
        for tag in _WIRE_TAG.values():
            if payload.startswith(tag):
                payload = payload[len(tag):]
                break
        if payload.startswith(b"MEAS|"):
            self.sink(decode_measurement(payload), ev.fire_at_us)


# -- one-shot routing -------------------------------------------------------------

@dataclass(frozen=True)
class RawReading:
    unit_id: int
    register: int
    raw_value: int
    timestamp_us: int = 0


@dataclass
class RouteContext:
    tenant_id: str
    device_id: str
    rules: dict[EdgeTier, TranslationRuleSet] = field(default_factory=dict)
    profile: FabricProfile = field(default_factory=FabricProfile)


@dataclass(frozen=True)
class Delivery:
    measurement: Measurement
    arrival_us: int


def route_via_pattern(pattern: OriginPattern, reading: RawReading, ctx: RouteContext,
                      seed: int = 0) -> Delivery:
    """Carry one reading to the platform through ``pattern`` on a fresh fabric."""
    pattern = OriginPattern(pattern)
    if pattern not in TRANSLATING_TIER:
        raise GatewayError(f"{pattern.value} is not a connection pattern")
    sched = Scheduler(seed)
    got: list[Delivery] = []
    fabric = Fabric(Network(sched), lambda m, t: got.append(Delivery(m, t)), ctx.profile)
    fabric.bind_device(DeviceContext(ctx.tenant_id, ctx.device_id, pattern), reading.unit_id,
                       ctx.rules.get(EdgeTier.DEVICE))
    fabric.gateway_rules = ctx.rules.get(EdgeTier.GATEWAY)
    fabric.cloud_rules = ctx.rules.get(EdgeTier.CLOUD)
    fabric.check_route(ctx.device_id, reading.register)
    sched.run_until(reading.timestamp_us)
    fabric.emit(ctx.device_id, reading.register, reading.raw_value)
    while sched.pending() and not got:
        sched.run_until(sched.next_time())
    if not got:
        raise GatewayError("reading lost in transit")
    return got[0]
