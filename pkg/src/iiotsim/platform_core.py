"""IoT platform core: tenants, device registry, hot store, retention and smart rules."""

from __future__ import annotations

import enum
import itertools
import logging
from collections import deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from pathlib import Path

from iiotsim import detect
from iiotsim.model import (Command, CommandVerb, Measurement, OriginPattern, decode_measurement,
                           encode_measurement)

logger = logging.getLogger(__name__)


class PlatformError(Exception):
    pass


class ParentNotFound(PlatformError):
    pass


class ParentNotCapable(PlatformError):
    pass


class UnknownTenant(PlatformError):
    pass


class AppNotOffered(PlatformError):
    pass


class CycleDetected(PlatformError):
    pass


class UnknownDevice(PlatformError):
    pass


class IllegalTransition(PlatformError):
    pass


class InvisibleSensor(PlatformError):
    pass


class SinkUnavailable(PlatformError):
    pass


# -- tenants ------------------------------------------------------------------

@dataclass(frozen=True)
class Scope:
    """Dataset scope of a sharing grant; ``None`` acts as a wildcard."""

    device_id: str | None = None
    sensor_id: str | None = None

    def covers(self, device_id: str, sensor_id: str) -> bool:
        return ((self.device_id is None or self.device_id == device_id)
                and (self.sensor_id is None or self.sensor_id == sensor_id))


@dataclass
class Tenant:
    tenant_id: str
    parent: str | None
    multi_tenant_capable: bool
    enabled_apps: frozenset[str] = frozenset()
    shared_with: set[tuple[str, Scope]] = field(default_factory=set)


class TenantRegistry:
    def __init__(self) -> None:
        self.tenants: dict[str, Tenant] = {}
        self._ids = itertools.count(1)

    def create_tenant(self, parent: str | None = None, multi_tenant_capable: bool = False,
                      apps: Iterable[str] = (), tenant_id: str | None = None) -> str:
        apps = frozenset(apps)
        if parent is not None:
            p = self.tenants.get(parent)
            if p is None:
                raise ParentNotFound(parent)
            if not p.multi_tenant_capable:
                raise ParentNotCapable(parent)
            missing = apps - p.enabled_apps
            if missing:
                raise AppNotOffered(f"{sorted(missing)} not offered by {parent}")
        if tenant_id is None:
            tenant_id = f"t{next(self._ids)}"
            while tenant_id in self.tenants:
                tenant_id = f"t{next(self._ids)}"
        elif tenant_id in self.tenants:
            raise PlatformError(f"tenant {tenant_id} exists")
        self.tenants[tenant_id] = Tenant(tenant_id, parent, multi_tenant_capable, apps)
        self.check_forest()
        return tenant_id

    def get(self, tenant_id: str) -> Tenant:
        try:
            return self.tenants[tenant_id]
        except KeyError:
            raise UnknownTenant(tenant_id) from None

    def check_forest(self) -> None:
        """Walk every parent chain; raises CycleDetected on a loop."""
        for start in self.tenants:
            seen = set()
            cur: str | None = start
            while cur is not None:
                if cur in seen:
                    raise CycleDetected(f"cycle through {cur}")
                seen.add(cur)
                cur = self.tenants[cur].parent

    def ancestors(self, tenant_id: str) -> list[str]:
        out = []
        cur = self.get(tenant_id).parent
        while cur is not None:
            out.append(cur)
            cur = self.tenants[cur].parent
        return out

    def grant(self, owner: str, grantee: str, scope: Scope = Scope()) -> None:
        self.get(grantee)
        self.get(owner).shared_with.add((grantee, scope))

    def revoke(self, owner: str, grantee: str, scope: Scope = Scope()) -> None:
        self.get(owner).shared_with.discard((grantee, scope))

    def visible_scopes(self, viewer: str) -> dict[str, list[Scope]]:
        """owner -> scopes ``viewer`` may read (own data is a full-scope entry)."""
        self.get(viewer)
        out: dict[str, list[Scope]] = {viewer: [Scope()]}
        for t in self.tenants.values():
            for grantee, scope in t.shared_with:
                if grantee == viewer and t.tenant_id != viewer:
                    out.setdefault(t.tenant_id, []).append(scope)
        return out


# -- devices ------------------------------------------------------------------

class Lifecycle(str, enum.Enum):
    REGISTERED = "REGISTERED"
    PROVISIONED = "PROVISIONED"
    ACTIVE = "ACTIVE"
    UPDATING = "UPDATING"
    DECOMMISSIONED = "DECOMMISSIONED"


_TRANSITIONS = {
    Lifecycle.REGISTERED: {Lifecycle.PROVISIONED, Lifecycle.DECOMMISSIONED},
    Lifecycle.PROVISIONED: {Lifecycle.ACTIVE, Lifecycle.DECOMMISSIONED},
    Lifecycle.ACTIVE: {Lifecycle.UPDATING, Lifecycle.DECOMMISSIONED},
    Lifecycle.UPDATING: {Lifecycle.ACTIVE, Lifecycle.DECOMMISSIONED},
    Lifecycle.DECOMMISSIONED: set(),
}


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    unit: str
    expected_period_ms: int = 1000


@dataclass
class DeviceRecord:
    device_id: str
    tenant_id: str
    sensors: dict[str, SensorSpec]
    pattern: OriginPattern = OriginPattern.NATIVE
    lifecycle: Lifecycle = Lifecycle.REGISTERED
    metadata: dict[str, str] = field(default_factory=dict)


# -- smart rules ----------------------------------------------------------------

class RuleAction(str, enum.Enum):
    EVENT = "EVENT"
    COMMAND = "COMMAND"


@dataclass
class SmartRule:
    rule_id: str
    tenant_id: str
    sensor_id: str
    detector: detect.Detector = detect.Detector.THRESHOLD
    op: detect.Comparison = detect.Comparison.ABOVE
    bound: float = 0.0
    window: int = 1
    action: RuleAction = RuleAction.EVENT
    command_verb: CommandVerb = CommandVerb.STOP
    device_id: str | None = None
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.window < 1:
            raise ValueError("window must be >= 1")
        self.detector = detect.Detector(self.detector)
        self.op = detect.Comparison(self.op)
        self.action = RuleAction(self.action)


@dataclass(frozen=True)
class FiredAction:
    rule_id: str
    kind: RuleAction
    measurement: Measurement
    command: Command | None = None


# -- ingest result --------------------------------------------------------------

class Rejection(str, enum.Enum):
    UNKNOWN_DEVICE = "UnknownDevice"
    INACTIVE_DEVICE = "InactiveDevice"
    TENANT_MISMATCH = "TenantMismatch"
    UNKNOWN_SENSOR = "UnknownSensor"


@dataclass(frozen=True)
class IngestResult:
    accepted: bool
    reason: Rejection | None = None
    actions: tuple[FiredAction, ...] = ()

    def __bool__(self) -> bool:
        return self.accepted


@dataclass(frozen=True)
class MeasurementFilter:
    device_id: str | None = None
    sensor_id: str | None = None
    since_us: int | None = None
    until_us: int | None = None
    include_lake: bool = False

    def accepts(self, m: Measurement) -> bool:
        return ((self.device_id is None or m.device_id == self.device_id)
                and (self.sensor_id is None or m.sensor_id == self.sensor_id)
                and (self.since_us is None or m.timestamp_us >= self.since_us)
                and (self.until_us is None or m.timestamp_us <= self.until_us))


@dataclass(frozen=True)
class RetentionPolicy:
    hot_window_us: int
    offload_sink: str = "lake"

    def __post_init__(self) -> None:
        if self.hot_window_us <= 0:
            raise ValueError("hot_window_us must be > 0")


class DataLake:
    """Append-only canonical-line files, one ``<tenant_id>.lake`` per tenant.

    With ``directory=None`` lines are kept in memory (same bytes).
    """

    def __init__(self, name: str = "lake", directory: str | Path | None = None):
        self.name = name
        self.directory = Path(directory) if directory is not None else None
        self._mem: dict[str, bytearray] = {}
        self.available = True

    def append(self, tenant_id: str, records: list[Measurement]) -> None:
        if not self.available:
            raise SinkUnavailable(self.name)
        blob = b"".join(encode_measurement(m) for m in records)
        if self.directory is None:
            self._mem.setdefault(tenant_id, bytearray()).extend(blob)
            return
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            with (self.directory / f"{tenant_id}.lake").open("ab") as fh:
                fh.write(blob)
        except OSError as exc:
            raise SinkUnavailable(f"{self.name}: {exc}") from exc

    def read(self, tenant_id: str) -> bytes:
        if self.directory is None:
            return bytes(self._mem.get(tenant_id, b""))
        path = self.directory / f"{tenant_id}.lake"
        return path.read_bytes() if path.exists() else b""

    def records(self, tenant_id: str) -> list[Measurement]:
        return [decode_measurement(line) for line in self.read(tenant_id).splitlines()]


_Key = tuple[str, str, str]


class Platform:
    """The middleware tying registry, storage, rules and the lambda fork together."""

    def __init__(self, retention: RetentionPolicy | None = None, sink: DataLake | None = None,
                 fork: Callable[[Measurement], object] | None = None):
        self.tenants = TenantRegistry()
        self.devices: dict[str, DeviceRecord] = {}
        self.rules: dict[str, SmartRule] = {}
        self.retention = retention
        self.sinks: dict[str, DataLake] = {}
        if sink is not None:
            self.sinks[sink.name] = sink
        elif retention is not None:
            self.sinks[retention.offload_sink] = DataLake(retention.offload_sink)
        self.fork = fork
        self.hot: dict[_Key, deque[Measurement]] = {}
        self._windows: dict[tuple[str, str], deque[Measurement]] = {}
        self._dev_ids = itertools.count(1)
        self.submitted = 0
        self.accepted = 0
        self.rejected: dict[Rejection, int] = {r: 0 for r in Rejection}
        self.offloaded = 0
        self.fired: list[FiredAction] = []

    # convenience passthroughs
    def create_tenant(self, parent: str | None = None, multi_tenant_capable: bool = False,
                      apps: Iterable[str] = (), tenant_id: str | None = None) -> str:
        return self.tenants.create_tenant(parent, multi_tenant_capable, apps, tenant_id)

    def register_device(self, tenant_id: str, sensors: Iterable[SensorSpec],
                        pattern: OriginPattern = OriginPattern.NATIVE,
                        device_id: str | None = None,
                        metadata: dict[str, str] | None = None) -> str:
        self.tenants.get(tenant_id)
        specs: dict[str, SensorSpec] = {}
        for s in sensors:
            if s.sensor_id in specs:
                raise PlatformError(f"duplicate sensor id {s.sensor_id}")
            specs[s.sensor_id] = s
        if device_id is None:
            device_id = f"d{next(self._dev_ids)}"
        if device_id in self.devices:
            raise PlatformError(f"device {device_id} exists")
        self.devices[device_id] = DeviceRecord(device_id, tenant_id, specs, OriginPattern(pattern),
                                               metadata=dict(metadata or {}))
        return device_id

    def device(self, device_id: str) -> DeviceRecord:
        try:
            return self.devices[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def advance_lifecycle(self, device_id: str, target: Lifecycle) -> Lifecycle:
        rec = self.device(device_id)
        target = Lifecycle(target)
        if target not in _TRANSITIONS[rec.lifecycle]:
            raise IllegalTransition(f"{rec.lifecycle.value} -> {target.value}")
        rec.lifecycle = target
        return target

    def activate(self, device_id: str) -> None:
        """REGISTERED -> PROVISIONED -> ACTIVE in one go."""
        self.advance_lifecycle(device_id, Lifecycle.PROVISIONED)
        self.advance_lifecycle(device_id, Lifecycle.ACTIVE)

    # -- rules

    def add_rule(self, rule: SmartRule) -> None:
        self.tenants.get(rule.tenant_id)
        visible = self.tenants.visible_scopes(rule.tenant_id)
        ok = False
        for d in self.devices.values():
            if rule.device_id is not None and d.device_id != rule.device_id:
                continue
            if rule.sensor_id not in d.sensors:
                continue
            if any(s.covers(d.device_id, rule.sensor_id) for s in visible.get(d.tenant_id, ())):
                ok = True
                break
        if not ok:
            raise InvisibleSensor(f"{rule.rule_id}: {rule.sensor_id} not visible to {rule.tenant_id}")
        self.rules[rule.rule_id] = rule

    def evaluate_rules(self, tenant_id: str, m: Measurement) -> list[FiredAction]:
        out = []
        for rule_id in sorted(self.rules):
            rule = self.rules[rule_id]
            if rule.tenant_id != tenant_id or rule.sensor_id != m.sensor_id:
                continue
            if rule.device_id is not None and rule.device_id != m.device_id:
                continue
            win = self._windows.setdefault((rule_id, m.device_id), deque(maxlen=rule.window))
            if not win or win[-1] is not m:
                win.append(m)
            if not rule.enabled:
                continue
            times = [x.timestamp_us for x in win]
            values = [x.value for x in win]
            if detect.fires(rule.detector, rule.op, rule.bound, times, values):
                cmd = None
                if rule.action is RuleAction.COMMAND:
                    cmd = Command(m.device_id, rule.command_verb, m.timestamp_us,
                                  {"rule": rule_id})
                out.append(FiredAction(rule_id, rule.action, m, cmd))
        return out

    # -- data path

    def ingest(self, m: Measurement) -> IngestResult:
        self.submitted += 1
        reason = self._check(m)
        if reason is not None:
            self.rejected[reason] += 1
            return IngestResult(False, reason)
        self.accepted += 1
        self.hot.setdefault((m.tenant_id, m.device_id, m.sensor_id), deque()).append(m)
        if self.fork is not None:
            self.fork(m)
        actions = self.evaluate_rules(m.tenant_id, m)
        self.fired.extend(actions)
        return IngestResult(True, None, tuple(actions))

    def _check(self, m: Measurement) -> Rejection | None:
        dev = self.devices.get(m.device_id)
        if dev is None:
            return Rejection.UNKNOWN_DEVICE
        if dev.lifecycle is not Lifecycle.ACTIVE:
            return Rejection.INACTIVE_DEVICE
        if dev.tenant_id != m.tenant_id:
            return Rejection.TENANT_MISMATCH
        if m.sensor_id not in dev.sensors:
            return Rejection.UNKNOWN_SENSOR
        return None

    def hot_count(self) -> int:
        return sum(len(q) for q in self.hot.values())

    def total_rejected(self) -> int:
        return sum(self.rejected.values())

    def query(self, tenant_id: str, flt: MeasurementFilter = MeasurementFilter()) -> list[Measurement]:
        """Owned data plus explicitly granted scopes; parents get nothing implicitly."""
        visible = self.tenants.visible_scopes(tenant_id)
        out: list[Measurement] = []
        for (owner, device_id, sensor_id), q in sorted(self.hot.items()):
            scopes = visible.get(owner)
            if not scopes or not any(s.covers(device_id, sensor_id) for s in scopes):
                continue
            out.extend(m for m in q if flt.accepts(m))
        if flt.include_lake and self.retention is not None:
            sink = self.sinks.get(self.retention.offload_sink)
            if sink is not None:
                for owner, scopes in sorted(visible.items()):
                    out.extend(m for m in sink.records(owner)
                               if flt.accepts(m)
                               and any(s.covers(m.device_id, m.sensor_id) for s in scopes))
        return out

    def retention_sweep(self, now_us: int) -> int:
        if self.retention is None:
            raise PlatformError("no retention policy set")
        sink = self.sinks.get(self.retention.offload_sink)
        if sink is None:
            raise SinkUnavailable(self.retention.offload_sink)
        cutoff = now_us - self.retention.hot_window_us
        moved: dict[str, list[Measurement]] = {}
        for key in sorted(self.hot):
            q = self.hot[key]
            old = [m for m in q if m.timestamp_us < cutoff]
            if old:
                moved.setdefault(key[0], []).extend(old)
        for tenant_id in sorted(moved):
            sink.append(tenant_id, moved[tenant_id])
        n = 0
        for key, q in self.hot.items():
            keep = [m for m in q if m.timestamp_us >= cutoff]
            n += len(q) - len(keep)
            q.clear()
            q.extend(keep)
        self.offloaded += n
        logger.debug("retention sweep at %d moved %d measurements", now_us, n)
        return n
