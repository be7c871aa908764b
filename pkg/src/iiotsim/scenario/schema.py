"""Scenario files: TOML documents with a fixed set of sections.

Loading goes through three steps: parse the text, apply ``--set`` overrides
on the raw document, then build typed sections while collecting every
violation with the dotted path that caused it. A scenario with any violation
is rejected as a whole.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from iiotsim import detect
from iiotsim.analytics import PLACEMENTS, PaintStationConfig, aggregate_sensor_ids
from iiotsim.apimgmt import (
    COMPRESSED_AIR_API,
    COMPRESSOR_TELEMETRY_API,
    ApiDescriptor,
    ApiKey,
    CyclicDependency,
    FieldMap,
    Layer,
    dependency_order,
)
from iiotsim.lambda_arch import ForkPlacement
from iiotsim.lowpower import EnergyModel, MessagingPolicy, MotionState, PolicyKind
from iiotsim.model import OriginPattern, PlantProfile, SizeClass, validate_plant_profile
from iiotsim.netsim import EdgeTier, Link, Zone

US = 1_000_000

ALIASES = {
    "placement": "placements.analytics",
    "seed": "scenario.seed",
    "duration": "scenario.duration_s",
}

ASSERT_OPS = ("==", "!=", "<", "<=", ">", ">=")


class ScenarioError(Exception):
    exit_code = 2


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


# -- typed sections ----------------------------------------------------------------

@dataclass(frozen=True)
class NodeSpec:
    name: str
    tier: EdgeTier
    zone: Zone


@dataclass(frozen=True)
class TenantSpec:
    tenant_id: str
    parent: str | None
    multi_tenant: bool
    apps: frozenset[str]


@dataclass(frozen=True)
class GrantSpec:
    owner: str
    grantee: str
    device_id: str | None
    sensor_id: str | None


@dataclass(frozen=True)
class SensorDef:
    sensor_id: str
    unit: str
    register: int
    scale: float
    offset: float
    raw_base: int
    raw_spread: int


@dataclass(frozen=True)
class DeviceSpec:
    device_id: str
    tenant_id: str
    pattern: OriginPattern
    unit_id: int
    period_us: int
    sensors: tuple[SensorDef, ...]


@dataclass(frozen=True)
class RuleSpec:
    rule_id: str
    tenant_id: str
    sensor_id: str
    detector: detect.Detector
    op: detect.Comparison
    bound: float
    window: int
    action: str
    device_id: str | None


@dataclass(frozen=True)
class FleetSpec:
    """Readings flowing device -> gateway -> platform."""

    start_us: int
    ruleset_version: int
    batch_interval_us: int
    hot_window_us: int | None
    profile: dict[str, Any]


@dataclass(frozen=True)
class ThroughputSpec:
    rate_bytes_per_s: float
    tick_s: float
    n_keys: int


@dataclass(frozen=True)
class LpwanDevice:
    device_id: str
    policy: str
    trace: tuple[tuple[int, MotionState], ...] | None
    random_trips_per_day: int


@dataclass(frozen=True)
class LpwanSpec:
    horizon_us: int
    payload_bytes: int
    energy: EnergyModel
    policies: dict[str, MessagingPolicy]
    devices: tuple[LpwanDevice, ...]


@dataclass(frozen=True)
class ApiSpec:
    tenant_id: str | None
    gateway_node: str
    client_node: str | None
    protected: tuple[str, ...]
    keys: tuple[tuple[ApiKey, str], ...]
    descriptors: tuple[ApiDescriptor, ...]
    requests: int
    mean_gap_us: int
    bad_key_fraction: float
    unknown_api_fraction: float


@dataclass(frozen=True)
class AssertSpec:
    metric: str
    op: str
    value: float | str

    def label(self) -> str:
        return f"{self.metric} {self.op} {self.value}"


@dataclass
class Scenario:
    name: str
    seed: int
    duration_us: int
    description: str = ""
    nodes: tuple[NodeSpec, ...] = ()
    links: tuple[tuple[Link, bool], ...] = ()
    tenants: tuple[TenantSpec, ...] = ()
    grants: tuple[GrantSpec, ...] = ()
    devices: tuple[DeviceSpec, ...] = ()
    rules: tuple[RuleSpec, ...] = ()
    analytics_tier: EdgeTier = EdgeTier.FACTORY_EDGE
    lambda_fork: ForkPlacement = ForkPlacement.AFTER_PLATFORM
    fleet: FleetSpec | None = None
    paint: PaintStationConfig | None = None
    plant: PlantProfile | None = None
    throughput: ThroughputSpec | None = None
    lpwan: LpwanSpec | None = None
    api: ApiSpec | None = None
    asserts: tuple[AssertSpec, ...] = ()
    doc: dict[str, Any] = field(default_factory=dict, repr=False)


# -- parsing & overrides -------------------------------------------------------------

def parse_text(text: str) -> dict[str, Any]:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(str(exc)) from None


def parse_override(item: str) -> tuple[str, Any]:
    """``a.b=value``; the value is read as a TOML literal, falling back to a bare string."""
    path, sep, raw = item.partition("=")
    path = path.strip()
    if not sep or not path:
        raise ParseError(f"override {item!r} is not of the form path=value")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return ALIASES.get(path, path), value


def apply_overrides(doc: dict[str, Any], overrides: list[tuple[str, Any]]) -> None:
    for path, value in overrides:
        parts = path.split(".")
        cur: Any = doc
        for i, part in enumerate(parts[:-1]):
            if isinstance(cur, list):
                if not part.isdigit() or int(part) >= len(cur):
                    raise ParseError(f"override {path}: no list index {part}")
                cur = cur[int(part)]
            elif isinstance(cur, dict):
                cur = cur.setdefault(part, {})
            else:
                raise ParseError(f"override {path}: {'.'.join(parts[:i + 1])} is not a table")
        last = parts[-1]
        if isinstance(cur, list):
            if not last.isdigit() or int(last) >= len(cur):
                raise ParseError(f"override {path}: no list index {last}")
            cur[int(last)] = value
        elif isinstance(cur, dict):
            cur[last] = value
        else:
            raise ParseError(f"override {path}: parent is not a table")


# -- building --------------------------------------------------------------------------

_MISSING = object()


class _Builder:
    def __init__(self, doc: dict[str, Any]):
        self.doc = doc
        self.violations: list[str] = []

    def bad(self, path: str, msg: str) -> None:
        self.violations.append(f"{path}: {msg}")

    def table(self, path: str, value: Any) -> dict[str, Any]:
        if value is _MISSING or value is None:
            return {}
        if not isinstance(value, dict):
            self.bad(path, "expected a table")
            return {}
        return value

    def tables(self, path: str, value: Any) -> list[tuple[str, dict[str, Any]]]:
        if value is _MISSING or value is None:
            return []
        if not isinstance(value, list) or not all(isinstance(v, dict) for v in value):
            self.bad(path, "expected an array of tables")
            return []
        return [(f"{path}[{i}]", v) for i, v in enumerate(value)]

    def known(self, path: str, t: dict[str, Any], keys: set[str]) -> None:
        for k in sorted(set(t) - keys):
            self.bad(f"{path}.{k}", "unknown key")

    def get(self, path: str, t: dict[str, Any], key: str, kind: type | tuple[type, ...],
            default: Any = _MISSING) -> Any:
        if key not in t:
            if default is _MISSING:
                self.bad(f"{path}.{key}", "required")
                return None
            return default
        v = t[key]
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            return float(v)
        kinds = kind if isinstance(kind, tuple) else (kind,)
        if isinstance(v, bool) and bool not in kinds:
            self.bad(f"{path}.{key}", f"expected {_kind_name(kind)}")
            return None if default is _MISSING else default
        if not isinstance(v, kinds):
            self.bad(f"{path}.{key}", f"expected {_kind_name(kind)}")
            return None if default is _MISSING else default
        return v

    def enum(self, path: str, t: dict[str, Any], key: str, cls: type, default: Any = _MISSING):
        raw = self.get(path, t, key, str, default if default is _MISSING else default.value)
        if raw is None:
            return None
        try:
            return cls[raw] if raw in cls.__members__ else cls(raw)
        except ValueError:
            self.bad(f"{path}.{key}", f"{raw!r} not one of {sorted(cls.__members__)}")
            return None

    def attempt(self, path: str, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except (ValueError, TypeError) as exc:
            self.bad(path, str(exc))
            return None


def _kind_name(kind: type | tuple[type, ...]) -> str:
    kinds = kind if isinstance(kind, tuple) else (kind,)
    return " or ".join(k.__name__ for k in kinds)


_TOP_LEVEL = {"scenario", "nodes", "links", "tenants", "grants", "devices", "rules", "placements",
              "fleet", "paint_station", "plant", "throughput", "lpwan", "api", "assert"}


def build_scenario(doc: dict[str, Any]) -> Scenario:
    """Typed scenario from a raw document; raises ValidationError listing every violation."""
    b = _Builder(doc)
    b.known("", doc, _TOP_LEVEL)
    head = b.table("scenario", doc.get("scenario", _MISSING))
    if "scenario" not in doc:
        b.bad("scenario", "required")
    b.known("scenario", head, {"name", "seed", "duration_s", "description"})
    name = b.get("scenario", head, "name", str, "") if head else ""
    seed = b.get("scenario", head, "seed", int, 0)
    duration_s = b.get("scenario", head, "duration_s", float, 60.0)
    if seed is not None and seed < 0:
        b.bad("scenario.seed", "must be >= 0")
    if duration_s is not None and not (duration_s > 0 and math.isfinite(duration_s)):
        b.bad("scenario.duration_s", "must be > 0")
    if head and not name:
        b.bad("scenario.name", "required")
    sc = Scenario(name=name or "", seed=seed or 0,
                  duration_us=int(round((duration_s or 0) * US)),
                  description=b.get("scenario", head, "description", str, ""), doc=doc)

    sc.nodes = _nodes(b)
    sc.links = _links(b, {n.name for n in sc.nodes})
    sc.tenants = _tenants(b)
    tenant_ids = {t.tenant_id for t in sc.tenants}
    sc.grants = _grants(b, tenant_ids)
    sc.devices = _devices(b, tenant_ids)

    pl = b.table("placements", doc.get("placements", _MISSING))
    b.known("placements", pl, {"analytics", "lambda_fork"})
    tier = b.enum("placements", pl, "analytics", EdgeTier, EdgeTier.FACTORY_EDGE)
    if tier is not None and tier not in PLACEMENTS:
        b.bad("placements.analytics", f"{tier.name} has no analytics profile; "
              f"use one of {[t.name for t in PLACEMENTS]}")
    elif tier is not None:
        sc.analytics_tier = tier
    fork = b.enum("placements", pl, "lambda_fork", ForkPlacement, ForkPlacement.AFTER_PLATFORM)
    if fork is not None:
        sc.lambda_fork = fork

    if "fleet" in doc:
        sc.fleet = _fleet(b, sc)
    if "paint_station" in doc:
        sc.paint = _paint(b, sc)
        if sc.paint is not None and sc.paint.edge_device_id in {d.device_id for d in sc.devices}:
            b.bad("paint_station.device", f"{sc.paint.edge_device_id!r} clashes with a device id")
    sc.rules = _rules(b, sc)
    if "plant" in doc:
        sc.plant = _plant(b)
    if "throughput" in doc:
        sc.throughput = _throughput(b)
    if "lpwan" in doc:
        sc.lpwan = _lpwan(b)
    if "api" in doc:
        sc.api = _api(b, sc)
    sc.asserts = _asserts(b)

    if b.violations:
        raise ValidationError(b.violations)
    return sc


def _nodes(b: _Builder) -> tuple[NodeSpec, ...]:
    out: list[NodeSpec] = []
    seen: set[str] = set()
    for path, t in b.tables("nodes", b.doc.get("nodes", _MISSING)):
        b.known(path, t, {"name", "tier", "zone"})
        name = b.get(path, t, "name", str)
        tier = b.enum(path, t, "tier", EdgeTier, EdgeTier.DEVICE)
        zone = b.enum(path, t, "zone", Zone, Zone.INTERNAL)
        if name in seen:
            b.bad(f"{path}.name", f"duplicate node {name!r}")
        elif name and tier is not None and zone is not None:
            seen.add(name)
            out.append(NodeSpec(name, tier, zone))
    return tuple(out)


def _links(b: _Builder, nodes: set[str]) -> tuple[tuple[Link, bool], ...]:
    out = []
    for path, t in b.tables("links", b.doc.get("links", _MISSING)):
        b.known(path, t, {"from", "to", "latency_us", "bandwidth", "loss", "jitter_us",
                          "bidirectional"})
        a = b.get(path, t, "from", str)
        z = b.get(path, t, "to", str)
        for key, end in (("from", a), ("to", z)):
            if end is not None and end not in nodes:
                b.bad(f"{path}.{key}", f"unknown node {end!r}")
        bw = t.get("bandwidth", "inf")
        bw = math.inf if bw == "inf" else bw
        if isinstance(bw, bool) or not isinstance(bw, (int, float)):
            b.bad(f"{path}.bandwidth", "expected a number or \"inf\"")
            continue
        link = b.attempt(path, Link, a, z, b.get(path, t, "latency_us", int, 0), float(bw),
                         b.get(path, t, "loss", float, 0.0), b.get(path, t, "jitter_us", int, 0))
        if link is not None and a in nodes and z in nodes:
            out.append((link, b.get(path, t, "bidirectional", bool, True)))
    return tuple(out)


def _tenants(b: _Builder) -> tuple[TenantSpec, ...]:
    specs: dict[str, tuple[str, TenantSpec]] = {}
    for path, t in b.tables("tenants", b.doc.get("tenants", _MISSING)):
        b.known(path, t, {"id", "parent", "multi_tenant", "apps"})
        tid = b.get(path, t, "id", str)
        apps = b.get(path, t, "apps", list, [])
        if tid is None:
            continue
        if tid in specs:
            b.bad(f"{path}.id", f"duplicate tenant {tid!r}")
            continue
        specs[tid] = (path, TenantSpec(tid, b.get(path, t, "parent", str, None),
                                       b.get(path, t, "multi_tenant", bool, False),
                                       frozenset(str(a) for a in apps or ())))
    for tid, (path, spec) in specs.items():
        if spec.parent is None:
            continue
        parent = specs.get(spec.parent)
        if parent is None:
            b.bad(f"{path}.parent", f"unknown tenant {spec.parent!r}")
            continue
        if not parent[1].multi_tenant:
            b.bad(f"{path}.parent", f"{spec.parent!r} is not multi-tenant capable")
        missing = spec.apps - parent[1].apps
        if missing:
            b.bad(f"{path}.apps", f"{sorted(missing)} not offered by {spec.parent!r}")
    # walk parent chains; report each cycle once
    reported: set[frozenset[str]] = set()
    for tid, (path, _) in specs.items():
        chain: list[str] = []
        cur: str | None = tid
        while cur is not None and cur in specs and cur not in chain:
            chain.append(cur)
            cur = specs[cur][1].parent
        if cur is not None and cur in chain:
            loop = chain[chain.index(cur):]
            if frozenset(loop) not in reported:
                reported.add(frozenset(loop))
                b.bad(f"{path}.parent", "tenant cycle " + " -> ".join(loop + [cur]))
    # parents before children so the registry can be rebuilt in file order
    ordered: list[TenantSpec] = []
    placed: set[str] = set()
    pending = [s for _, s in specs.values()]
    while pending:
        ready = [s for s in pending if s.parent is None or s.parent in placed
                 or s.parent not in specs]
        if not ready:
            break
        for s in ready:
            ordered.append(s)
            placed.add(s.tenant_id)
        pending = [s for s in pending if s.tenant_id not in placed]
    return tuple(ordered)


def _grants(b: _Builder, tenants: set[str]) -> tuple[GrantSpec, ...]:
    out = []
    for path, t in b.tables("grants", b.doc.get("grants", _MISSING)):
        b.known(path, t, {"owner", "grantee", "device", "sensor"})
        owner = b.get(path, t, "owner", str)
        grantee = b.get(path, t, "grantee", str)
        for key, tid in (("owner", owner), ("grantee", grantee)):
            if tid is not None and tid not in tenants:
                b.bad(f"{path}.{key}", f"unknown tenant {tid!r}")
        out.append(GrantSpec(owner, grantee, b.get(path, t, "device", str, None),
                             b.get(path, t, "sensor", str, None)))
    return tuple(out)


def _devices(b: _Builder, tenants: set[str]) -> tuple[DeviceSpec, ...]:
    out = []
    ids: set[str] = set()
    units: set[int] = set()
    for path, t in b.tables("devices", b.doc.get("devices", _MISSING)):
        b.known(path, t, {"id", "tenant", "pattern", "unit_id", "period_ms", "sensors"})
        did = b.get(path, t, "id", str)
        tenant = b.get(path, t, "tenant", str)
        pattern = b.enum(path, t, "pattern", OriginPattern, OriginPattern.STANDARD_AGENT)
        unit_id = b.get(path, t, "unit_id", int)
        period_ms = b.get(path, t, "period_ms", int, 1000)
        if did in ids:
            b.bad(f"{path}.id", f"duplicate device {did!r}")
        if tenant is not None and tenant not in tenants:
            b.bad(f"{path}.tenant", f"unknown tenant {tenant!r}")
        if pattern is OriginPattern.NATIVE:
            b.bad(f"{path}.pattern", "NATIVE is not a connection pattern")
        if unit_id is not None:
            if not 1 <= unit_id <= 247:
                b.bad(f"{path}.unit_id", "must lie in [1, 247]")
            elif unit_id in units:
                b.bad(f"{path}.unit_id", f"unit id {unit_id} already in use")
            units.add(unit_id)
        if period_ms is not None and period_ms <= 0:
            b.bad(f"{path}.period_ms", "must be > 0")
        sensors = []
        regs: set[int] = set()
        sids: set[str] = set()
        for spath, s in b.tables(f"{path}.sensors", t.get("sensors", _MISSING)):
            b.known(spath, s, {"id", "unit", "register", "scale", "offset", "raw_base", "raw_spread"})
            sid = b.get(spath, s, "id", str)
            reg = b.get(spath, s, "register", int)
            if sid in sids:
                b.bad(f"{spath}.id", f"duplicate sensor {sid!r}")
            if reg is not None:
                if not 0 <= reg <= 0xFFFF:
                    b.bad(f"{spath}.register", "must lie in [0, 65535]")
                elif reg in regs:
                    b.bad(f"{spath}.register", f"register {reg} already mapped")
                regs.add(reg)
            sids.add(sid)
            spread = b.get(spath, s, "raw_spread", int, 0)
            if spread is not None and spread < 0:
                b.bad(f"{spath}.raw_spread", "must be >= 0")
            sensors.append(SensorDef(sid, b.get(spath, s, "unit", str, ""), reg or 0,
                                     b.get(spath, s, "scale", float, 1.0),
                                     b.get(spath, s, "offset", float, 0.0),
                                     b.get(spath, s, "raw_base", int, 0), spread or 0))
        if not sensors:
            b.bad(f"{path}.sensors", "at least one sensor required")
        if did is not None and tenant is not None and pattern is not None and unit_id is not None:
            ids.add(did)
            out.append(DeviceSpec(did, tenant, pattern, unit_id, (period_ms or 1000) * 1000,
                                  tuple(sensors)))
    return tuple(out)


def _rules(b: _Builder, sc: Scenario) -> tuple[RuleSpec, ...]:
    inventory = [(d.tenant_id, d.device_id, {s.sensor_id for s in d.sensors}) for d in sc.devices]
    if sc.paint is not None:
        robots = [f"r{i:02d}" for i in range(sc.paint.robot_count)]
        inventory.append((sc.paint.tenant_id, sc.paint.edge_device_id,
                          set(aggregate_sensor_ids(robots))))
    out = []
    for path, t in b.tables("rules", b.doc.get("rules", _MISSING)):
        b.known(path, t, {"id", "tenant", "sensor", "detector", "op", "bound", "window", "action",
                          "device"})
        action = b.get(path, t, "action", str, "EVENT")
        if action not in ("EVENT", "COMMAND"):
            b.bad(f"{path}.action", "must be EVENT or COMMAND")
        op_raw = b.get(path, t, "op", str, ">")
        try:
            op = detect.Comparison(op_raw)
        except ValueError:
            b.bad(f"{path}.op", "must be '>' or '<'")
            op = None
        window = b.get(path, t, "window", int, 1)
        if window is not None and window < 1:
            b.bad(f"{path}.window", "must be >= 1")
        spec = RuleSpec(b.get(path, t, "id", str), b.get(path, t, "tenant", str),
                        b.get(path, t, "sensor", str),
                        b.enum(path, t, "detector", detect.Detector, detect.Detector.THRESHOLD),
                        op, b.get(path, t, "bound", float, 0.0), window or 1, action,
                        b.get(path, t, "device", str, None))
        if None in (spec.rule_id, spec.tenant_id, spec.sensor_id, spec.detector, spec.op):
            continue
        if spec.rule_id in {r.rule_id for r in out}:
            b.bad(f"{path}.id", f"duplicate rule {spec.rule_id!r}")
            continue
        # the sensor has to exist on a device the rule's tenant may read
        visible = {spec.tenant_id}
        for g in sc.grants:
            if g.grantee == spec.tenant_id:
                visible.add(g.owner)
        ok = any(owner in visible and spec.sensor_id in sensors
                 and (spec.device_id is None or device_id == spec.device_id)
                 and (owner == spec.tenant_id or _grant_covers(sc.grants, owner, device_id, spec))
                 for owner, device_id, sensors in inventory)
        if not ok:
            b.bad(f"{path}.sensor", f"{spec.sensor_id!r} not visible to tenant {spec.tenant_id!r}")
        out.append(spec)
    return tuple(out)


def _grant_covers(grants: tuple[GrantSpec, ...], owner: str, device_id: str,
                  rule: RuleSpec) -> bool:
    return any(g.owner == owner and g.grantee == rule.tenant_id
               and (g.device_id is None or g.device_id == device_id)
               and (g.sensor_id is None or g.sensor_id == rule.sensor_id) for g in grants)


def _fleet(b: _Builder, sc: Scenario) -> FleetSpec:
    t = b.table("fleet", b.doc["fleet"])
    profile_keys = {"fieldbus_latency_us", "fieldbus_bandwidth", "wan_latency_us", "wan_bandwidth",
                    "device_translate_us", "gateway_translate_us", "gateway_relay_us",
                    "cloud_translate_us", "cloud_queue_us"}
    b.known("fleet", t, {"start_s", "ruleset_version", "batch_interval_s", "hot_window_s"}
            | profile_keys)
    if not sc.devices:
        b.bad("fleet", "needs at least one [[devices]] entry")
    profile = {}
    for k in sorted(profile_keys & set(t)):
        v = b.get("fleet", t, k, float if "bandwidth" in k else int)
        if v is not None and v <= 0:
            b.bad(f"fleet.{k}", "must be > 0")
        profile[k] = v
    start = b.get("fleet", t, "start_s", float, 1.0)
    version = b.get("fleet", t, "ruleset_version", int, 1)
    batch = b.get("fleet", t, "batch_interval_s", float, 10.0)
    hot = b.get("fleet", t, "hot_window_s", float, None)
    if version is not None and version < 1:
        b.bad("fleet.ruleset_version", "must be >= 1")
    if batch is not None and batch <= 0:
        b.bad("fleet.batch_interval_s", "must be > 0")
    if hot is not None and hot <= 0:
        b.bad("fleet.hot_window_s", "must be > 0")
    if start is not None and start < 0:
        b.bad("fleet.start_s", "must be >= 0")
    return FleetSpec(int(round((start or 0) * US)), version or 1, int(round((batch or 10) * US)),
                     None if hot is None else int(round(hot * US)), profile)


def _paint(b: _Builder, sc: Scenario) -> PaintStationConfig | None:
    t = b.table("paint_station", b.doc["paint_station"])
    b.known("paint_station", t, {"robot_count", "duty_cycle_ms", "uplink_interval_ms",
                                 "deadline_ms", "fault_count", "fault_start_s", "fault_spacing_s",
                                 "repair_s", "aggregate_period_s", "tenant", "device"})
    robots = b.get("paint_station", t, "robot_count", int, 8)
    if robots is not None and not 6 <= robots <= 12:
        b.bad("paint_station.robot_count", "must lie in [6, 12]")
    faults = b.get("paint_station", t, "fault_count", int, 60)
    if faults is not None and faults < 0:
        b.bad("paint_station.fault_count", "must be >= 0")
    vals = {k: b.get("paint_station", t, k, float, d) for k, d in
            (("duty_cycle_ms", 10.0), ("uplink_interval_ms", 200.0), ("deadline_ms", 500.0),
             ("fault_start_s", 2.0), ("fault_spacing_s", 2.0), ("repair_s", 5.0),
             ("aggregate_period_s", 60.0))}
    for k in ("uplink_interval_ms", "fault_spacing_s", "repair_s", "aggregate_period_s"):
        if vals[k] is not None and vals[k] <= 0:
            b.bad(f"paint_station.{k}", "must be > 0")
    if b.violations or None in vals.values() or robots is None or faults is None:
        return None
    cfg = b.attempt("paint_station", PaintStationConfig,
                    robot_count=robots,
                    duty_cycle_us=int(round(vals["duty_cycle_ms"] * 1000)),
                    uplink_interval_us=int(round(vals["uplink_interval_ms"] * 1000)),
                    reaction_deadline_us=int(round(vals["deadline_ms"] * 1000)),
                    placement=sc.analytics_tier,
                    fault_count=faults,
                    fault_start_us=int(round(vals["fault_start_s"] * US)),
                    fault_spacing_us=int(round(vals["fault_spacing_s"] * US)),
                    repair_delay_us=int(round(vals["repair_s"] * US)),
                    aggregate_period_us=int(round(vals["aggregate_period_s"] * US)),
                    tenant_id=b.get("paint_station", t, "tenant", str, "paint-shop"),
                    edge_device_id=b.get("paint_station", t, "device", str, "paint-edge"),
                    seed=sc.seed,
                    duration_us=sc.duration_us)
    return cfg


def _plant(b: _Builder) -> PlantProfile | None:
    t = b.table("plant", b.doc["plant"])
    b.known("plant", t, {"size_class", "sensor_count", "control_system_count", "gateway_count",
                         "daily_data_gb"})
    size = b.enum("plant", t, "size_class", SizeClass)
    counts = {k: b.get("plant", t, k, int) for k in
              ("sensor_count", "control_system_count", "gateway_count")}
    gb = b.get("plant", t, "daily_data_gb", float)
    if size is None or gb is None or None in counts.values():
        return None
    profile = PlantProfile(size, daily_data_gb=gb, **counts)
    for name in validate_plant_profile(profile):
        b.bad(f"plant.{name}", f"{getattr(profile, name)} outside the {size.value} band")
    return profile


def _throughput(b: _Builder) -> ThroughputSpec | None:
    t = b.table("throughput", b.doc["throughput"])
    b.known("throughput", t, {"rate_bytes_per_s", "tick_s", "n_keys"})
    rate = b.get("throughput", t, "rate_bytes_per_s", float, 2_400_000.0)
    tick = b.get("throughput", t, "tick_s", float, 0.1)
    keys = b.get("throughput", t, "n_keys", int, 4096)
    for k, v in (("rate_bytes_per_s", rate), ("tick_s", tick), ("n_keys", keys)):
        if v is not None and v <= 0:
            b.bad(f"throughput.{k}", "must be > 0")
    if None in (rate, tick, keys):
        return None
    return ThroughputSpec(rate, tick, keys)


def _lpwan(b: _Builder) -> LpwanSpec | None:
    t = b.table("lpwan", b.doc["lpwan"])
    b.known("lpwan", t, {"horizon_days", "payload_bytes", "energy", "policies", "devices"})
    horizon = b.get("lpwan", t, "horizon_days", float, 1.0)
    payload = b.get("lpwan", t, "payload_bytes", int, 40)
    if horizon is not None and horizon <= 0:
        b.bad("lpwan.horizon_days", "must be > 0")
    if payload is not None and payload < 0:
        b.bad("lpwan.payload_bytes", "must be >= 0")
    et = b.table("lpwan.energy", t.get("energy", _MISSING))
    b.known("lpwan.energy", et, {"battery_budget", "per_message_cost", "idle_cost_per_day"})
    defaults = EnergyModel()
    energy = b.attempt("lpwan.energy", EnergyModel,
                       b.get("lpwan.energy", et, "battery_budget", float, defaults.battery_budget),
                       b.get("lpwan.energy", et, "per_message_cost", float,
                             defaults.per_message_cost),
                       b.get("lpwan.energy", et, "idle_cost_per_day", float,
                             defaults.idle_cost_per_day))
    policies: dict[str, MessagingPolicy] = {}
    for path, p in b.tables("lpwan.policies", t.get("policies", _MISSING)):
        b.known(path, p, {"id", "kind", "messages_per_day", "max_payload_bytes",
                          "stationary_interval_s", "moving_interval_s", "send_on_motion_start"})
        pid = b.get(path, p, "id", str)
        kind = b.enum(path, p, "kind", PolicyKind, PolicyKind.FIXED_DAILY)
        base = MessagingPolicy()
        pol = b.attempt(path, MessagingPolicy, kind, b.get(path, p, "messages_per_day", int, 1),
                        b.get(path, p, "max_payload_bytes", int, base.max_payload_bytes),
                        int(round(b.get(path, p, "stationary_interval_s", float,
                                        base.stationary_interval_us / US) * US)),
                        int(round(b.get(path, p, "moving_interval_s", float,
                                        base.moving_interval_us / US) * US)),
                        b.get(path, p, "send_on_motion_start", bool, True))
        if pid in policies:
            b.bad(f"{path}.id", f"duplicate policy {pid!r}")
        elif pid is not None and pol is not None:
            policies[pid] = pol
    devices = []
    for path, d in b.tables("lpwan.devices", t.get("devices", _MISSING)):
        b.known(path, d, {"id", "policy", "trace", "random_trips_per_day"})
        did = b.get(path, d, "id", str)
        pol = b.get(path, d, "policy", str)
        if pol is not None and pol not in policies:
            b.bad(f"{path}.policy", f"unknown policy {pol!r}")
        trips = b.get(path, d, "random_trips_per_day", int, 0)
        if trips is not None and trips < 0:
            b.bad(f"{path}.random_trips_per_day", "must be >= 0")
        trace = None
        if "trace" in d:
            trace = _trace(b, f"{path}.trace", d["trace"])
            if trips:
                b.bad(path, "give either trace or random_trips_per_day, not both")
        if did is not None and pol is not None:
            devices.append(LpwanDevice(did, pol, trace, trips or 0))
    if len({d.device_id for d in devices}) != len(devices):
        b.bad("lpwan.devices", "duplicate device ids")
    if energy is None or horizon is None or payload is None:
        return None
    return LpwanSpec(int(round(horizon * 86_400 * US)), payload, energy, policies, tuple(devices))


def _trace(b: _Builder, path: str, raw: Any) -> tuple[tuple[int, MotionState], ...] | None:
    if not isinstance(raw, list):
        b.bad(path, "expected a list of [seconds, state] pairs")
        return None
    out = []
    prev = -1
    for i, item in enumerate(raw):
        if (not isinstance(item, list) or len(item) != 2 or isinstance(item[0], bool)
                or not isinstance(item[0], (int, float)) or item[1] not in MotionState.__members__):
            b.bad(f"{path}[{i}]", "expected [seconds, \"MOVING\"|\"STATIONARY\"]")
            return None
        t = int(round(item[0] * US))
        if t < 0 or t < prev:
            b.bad(f"{path}[{i}]", "transition times must be >= 0 and non-decreasing")
            return None
        prev = t
        out.append((t, MotionState[item[1]]))
    return tuple(out)


def _api(b: _Builder, sc: Scenario) -> ApiSpec | None:
    builtins = {d.api_id: d for d in (COMPRESSED_AIR_API, COMPRESSOR_TELEMETRY_API)}
    t = b.table("api", b.doc["api"])
    b.known("api", t, {"tenant", "gateway_node", "client_node", "protected", "builtin", "keys",
                       "descriptors", "requests", "mean_gap_ms", "bad_key_fraction",
                       "unknown_api_fraction"})
    tenant = b.get("api", t, "tenant", str, None)
    if tenant is not None and tenant not in {x.tenant_id for x in sc.tenants}:
        b.bad("api.tenant", f"unknown tenant {tenant!r}")
    node_zone = {n.name: n.zone for n in sc.nodes}
    gw = b.get("api", t, "gateway_node", str, "api-gateway")
    client = b.get("api", t, "client_node", str, None)
    protected = b.get("api", t, "protected", list, [])
    if node_zone:
        if gw not in node_zone:
            b.bad("api.gateway_node", f"unknown node {gw!r}")
        elif node_zone[gw] is not Zone.DMZ:
            b.bad("api.gateway_node", f"{gw!r} must sit in the DMZ zone")
        if client is not None and client not in node_zone:
            b.bad("api.client_node", f"unknown node {client!r}")
        for i, p in enumerate(protected or ()):
            if p not in node_zone:
                b.bad(f"api.protected[{i}]", f"unknown node {p!r}")
    descs: list[ApiDescriptor] = []
    for i, name in enumerate(b.get("api", t, "builtin", list, []) or ()):
        if name not in builtins:
            b.bad(f"api.builtin[{i}]", f"unknown built-in API {name!r}")
        else:
            descs.append(builtins[name])
    for path, d in b.tables("api.descriptors", t.get("descriptors", _MISSING)):
        b.known(path, d, {"id", "layer", "backend", "params", "depends_on", "rate_limit",
                          "mediation"})
        rl = b.get(path, d, "rate_limit", list, None)
        if rl is not None and (len(rl) != 2 or rl[0] < 1 or rl[1] <= 0):
            b.bad(f"{path}.rate_limit", "expected [max_requests, window_s]")
            rl = None
        maps = None
        if "mediation" in d:
            maps = []
            for mpath, m in b.tables(f"{path}.mediation", d["mediation"]):
                b.known(mpath, m, {"source", "target", "scale", "offset"})
                maps.append(FieldMap(b.get(mpath, m, "source", str), b.get(mpath, m, "target", str),
                                     b.get(mpath, m, "scale", float, 1.0),
                                     b.get(mpath, m, "offset", float, 0.0)))
            maps = tuple(maps)
        desc = b.attempt(path, ApiDescriptor, b.get(path, d, "id", str),
                         b.enum(path, d, "layer", Layer, Layer.SYSTEM),
                         b.get(path, d, "backend", str, "platform.query"),
                         tuple(b.get(path, d, "params", list, []) or ()), maps, (),
                         frozenset(b.get(path, d, "depends_on", list, []) or ()),
                         None if rl is None else (int(rl[0]), int(round(rl[1] * US))))
        if desc is not None and desc.api_id is not None:
            descs.append(desc)
    ids = [d.api_id for d in descs]
    if len(set(ids)) != len(ids):
        b.bad("api.descriptors", "duplicate api ids")
    for d in descs:
        for dep in sorted(d.depends_on - set(ids)):
            b.bad("api.descriptors", f"{d.api_id} depends on undeclared {dep!r}")
    try:
        dependency_order(descs)
    except CyclicDependency as exc:
        b.bad("api.descriptors", f"dependency cycle {exc}")
    keys = []
    for path, k in b.tables("api.keys", t.get("keys", _MISSING)):
        b.known(path, k, {"id", "secret", "scopes", "limit", "window_s"})
        kid = b.get(path, k, "id", str)
        secret = b.get(path, k, "secret", str)
        scopes = b.get(path, k, "scopes", list, [])
        limit = b.get(path, k, "limit", int, 100)
        window = b.get(path, k, "window_s", float, 1.0)
        if kid is None or secret is None or limit is None or window is None:
            continue
        key = b.attempt(path, ApiKey.issue, kid, secret, scopes or (),
                        (limit, int(round(window * US))))
        if key is not None:
            keys.append((key, secret))
    if not keys:
        b.bad("api.keys", "at least one key required")
    requests = b.get("api", t, "requests", int, 1000)
    gap = b.get("api", t, "mean_gap_ms", float, 10.0)
    badk = b.get("api", t, "bad_key_fraction", float, 0.02)
    unk = b.get("api", t, "unknown_api_fraction", float, 0.02)
    if requests is not None and requests < 0:
        b.bad("api.requests", "must be >= 0")
    if gap is not None and gap <= 0:
        b.bad("api.mean_gap_ms", "must be > 0")
    for k, v in (("bad_key_fraction", badk), ("unknown_api_fraction", unk)):
        if v is not None and not 0 <= v <= 1:
            b.bad(f"api.{k}", "must lie in [0, 1]")
    if None in (requests, gap, badk, unk):
        return None
    return ApiSpec(tenant, gw, client, tuple(protected or ()), tuple(keys), tuple(descs),
                   requests, int(round(gap * 1000)), badk, unk)


def _asserts(b: _Builder) -> tuple[AssertSpec, ...]:
    out = []
    for path, t in b.tables("assert", b.doc.get("assert", _MISSING)):
        b.known(path, t, {"metric", "op", "value"})
        metric = b.get(path, t, "metric", str)
        op = b.get(path, t, "op", str, "==")
        value = b.get(path, t, "value", (int, float, str))
        if op not in ASSERT_OPS:
            b.bad(f"{path}.op", f"must be one of {list(ASSERT_OPS)}")
            continue
        if metric is not None and value is not None:
            out.append(AssertSpec(metric, op, value))
    return tuple(out)


# -- entry points ----------------------------------------------------------------------

def load_scenario(source: str | Path, overrides: list[str] | None = None) -> Scenario:
    """Load a validated scenario with overrides applied; raises ParseError or ValidationError."""
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{source}: {exc.strerror or exc}") from None
    doc = parse_text(text)
    apply_overrides(doc, [parse_override(o) for o in overrides or ()])
    return build_scenario(doc)


def validate_scenario(source: str | Path) -> list[str]:
    """Violations for a scenario file (empty when it is fine)."""
    try:
        load_scenario(source)
    except ValidationError as exc:
        return list(exc.violations)
    except ParseError as exc:
        return [f"parse: {exc}"]
    return []
