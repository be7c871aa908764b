"""API gateway (DMZ), mediation gateway and catalog generation."""

from __future__ import annotations

import enum
import graphlib
import hashlib
import hmac
from collections import deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from typing import Any

from iiotsim.netsim import Network, Zone


class Layer(str, enum.Enum):
    EXPERIENCE = "EXPERIENCE"
    PROCESS = "PROCESS"
    SYSTEM = "SYSTEM"


class Denial(str, enum.Enum):
    AUTH_FAILED = "AUTH_FAILED"
    FORBIDDEN = "FORBIDDEN"
    RATE_LIMITED = "RATE_LIMITED"
    UNKNOWN_API = "UNKNOWN_API"
    MISSING_FIELD = "MISSING_FIELD"
    BACKEND_UNAVAILABLE = "BACKEND_UNAVAILABLE"


class MissingField(KeyError):
    pass


class CyclicDependency(ValueError):
    def __init__(self, cycle: list[str]):
        super().__init__(" -> ".join(cycle))
        self.cycle = cycle


def hash_secret(secret: str) -> str:
    return hashlib.sha256(secret.encode()).hexdigest()


@dataclass(frozen=True)
class ApiKey:
    key_id: str
    secret_hash: str
    scopes: frozenset[str]
    rate_limit: tuple[int, int] = (100, 1_000_000)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scopes", frozenset(self.scopes))
        if not self.scopes:
            raise ValueError("scopes must be non-empty")
        if self.rate_limit[0] < 1 or self.rate_limit[1] <= 0:
            raise ValueError("rate limit needs N >= 1 and a positive window")

    @classmethod
    def issue(cls, key_id: str, secret: str, scopes: Iterable[str],
              rate_limit: tuple[int, int] = (100, 1_000_000)) -> ApiKey:
        return cls(key_id, hash_secret(secret), frozenset(scopes), rate_limit)


@dataclass(frozen=True)
class FieldMap:
    source: str
    target: str
    scale: float = 1.0
    offset: float = 0.0


@dataclass
class ApiDescriptor:
    api_id: str
    layer: Layer
    backend: str
    params: tuple[str, ...] = ()
    mediation: tuple[FieldMap, ...] | None = None
    policies: tuple[str, ...] = ()
    depends_on: frozenset[str] = frozenset()
    rate_limit: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        self.layer = Layer(self.layer)
        self.depends_on = frozenset(self.depends_on)


def mediate(descriptor: ApiDescriptor, backend_payload: dict[str, Any]) -> dict[str, Any]:
    """Rename and linearly convert fields; fields not in the map are dropped."""
    if descriptor.mediation is None:
        return dict(backend_payload)
    out: dict[str, Any] = {}
    for fm in descriptor.mediation:
        if fm.source not in backend_payload:
            raise MissingField(fm.source)
        v = backend_payload[fm.source]
        if (fm.scale, fm.offset) != (1.0, 0.0):
            v = fm.scale * v + fm.offset
        out[fm.target] = v
    return out


@dataclass(frozen=True)
class Request:
    key: str
    api_id: str
    params: dict[str, str] = field(default_factory=dict)

    def encode(self) -> bytes:
        kv = ",".join(f"{k}={v}" for k, v in sorted(self.params.items()))
        return f"REQ|{self.key}|{self.api_id}|{kv}\n".encode()

    @classmethod
    def decode(cls, line: bytes | str) -> Request:
        text = line.decode() if isinstance(line, (bytes, bytearray)) else line
        tag, key, api_id, kv = text.rstrip("\n").split("|", 3)
        if tag != "REQ":
            raise ValueError("not a REQ line")
        params = dict(item.split("=", 1) for item in kv.split(",") if item)
        return cls(key, api_id, params)


@dataclass(frozen=True)
class Response:
    ok: bool
    payload: dict[str, Any] | None = None
    denial: Denial | None = None

    def encode(self) -> bytes:
        if not self.ok:
            return f"DENY|{self.denial.value}\n".encode()
        kv = ",".join(f"{k}={v}" for k, v in sorted((self.payload or {}).items()))
        return f"RESP|OK|{kv}\n".encode()


Backend = Callable[[dict[str, str]], dict[str, Any]]


class SlidingWindowLimiter:
    """Admit iff fewer than N admissions fall in (now - window, now]."""

    def __init__(self, limit: int, window_us: int):
        self.limit = limit
        self.window_us = window_us
        self._admitted: deque[int] = deque()

    def would_admit(self, now_us: int) -> bool:
        q = self._admitted
        while q and q[0] <= now_us - self.window_us:
            q.popleft()
        return len(q) < self.limit

    def admit(self, now_us: int) -> bool:
        if not self.would_admit(now_us):
            return False
        self._admitted.append(now_us)
        return True


class MediationGateway:
    """Internal router: descriptor lookup, backend invocation, payload mediation."""

    def __init__(self) -> None:
        self.descriptors: dict[str, ApiDescriptor] = {}
        self.backends: dict[str, Backend] = {}

    def register(self, descriptor: ApiDescriptor) -> None:
        self.descriptors[descriptor.api_id] = descriptor

    def bind_backend(self, name: str, fn: Backend) -> None:
        self.backends[name] = fn

    def route(self, api_id: str, params: dict[str, str]) -> Response:
        d = self.descriptors.get(api_id)
        if d is None:
            return Response(False, denial=Denial.UNKNOWN_API)
        fn = self.backends.get(d.backend)
        if fn is None:
            return Response(False, denial=Denial.BACKEND_UNAVAILABLE)
        try:
            raw = fn(params)
        except Exception:
            return Response(False, denial=Denial.BACKEND_UNAVAILABLE)
        if raw is None:
            return Response(False, denial=Denial.BACKEND_UNAVAILABLE)
        try:
            return Response(True, mediate(d, raw))
        except MissingField:
            return Response(False, denial=Denial.MISSING_FIELD)


class ApiGateway:
    """DMZ-resident reverse proxy: authenticate, authorize, rate-limit, forward."""

    def __init__(self, mediation: MediationGateway):
        self.mediation = mediation
        self.keys: dict[str, ApiKey] = {}
        self._limiters: dict[tuple[str, str | None], SlidingWindowLimiter] = {}
        # (now_us, key_id, api_id, outcome, passed_rate_limit)
        self.log: list[tuple[int, str, str, str, bool]] = []

    def add_key(self, key: ApiKey) -> None:
        self.keys[key.key_id] = key

    def _limiter(self, key: ApiKey, api: str | None, n: int, w: int) -> SlidingWindowLimiter:
        lim = self._limiters.get((key.key_id, api))
        if lim is None:
            lim = self._limiters[(key.key_id, api)] = SlidingWindowLimiter(n, w)
        return lim

    def _authenticate(self, presented: str) -> ApiKey | None:
        key_id, _, secret = presented.partition(":")
        key = self.keys.get(key_id)
        if key is None or not hmac.compare_digest(key.secret_hash, hash_secret(secret)):
            return None
        return key

    def handle_request(self, request: Request, now_us: int) -> Response:
        resp, admitted = self._handle(request, now_us)
        key_id = request.key.partition(":")[0]
        self.log.append((now_us, key_id, request.api_id,
                         "OK" if resp.ok else resp.denial.value, admitted))
        return resp

    def _handle(self, request: Request, now_us: int) -> tuple[Response, bool]:
        key = self._authenticate(request.key)
        if key is None:
            return Response(False, denial=Denial.AUTH_FAILED), False
        if request.api_id not in key.scopes:
            return Response(False, denial=Denial.FORBIDDEN), False
        desc = self.mediation.descriptors.get(request.api_id)
        if desc is None:
            return Response(False, denial=Denial.UNKNOWN_API), False
        key_lim = self._limiter(key, None, *key.rate_limit)
        api_lim = (self._limiter(key, desc.api_id, *desc.rate_limit)
                   if desc.rate_limit is not None else None)
        # check both before admitting into either, so a denial consumes nothing
        if not key_lim.would_admit(now_us) or (api_lim and not api_lim.would_admit(now_us)):
            return Response(False, denial=Denial.RATE_LIMITED), False
        key_lim.admit(now_us)
        if api_lim:
            api_lim.admit(now_us)
        return self.mediation.route(request.api_id, request.params), True

    def admitted_times(self, key_id: str) -> list[int]:
        return [t for t, k, _, _, admitted in self.log if k == key_id and admitted]


# -- catalog ----------------------------------------------------------------------------

def dependency_order(descriptors: Iterable[ApiDescriptor]) -> list[str]:
    """Dependencies first; ties broken by api id. Raises CyclicDependency."""
    graph = {d.api_id: set(d.depends_on) for d in descriptors}
    ts = graphlib.TopologicalSorter(graph)
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        raise CyclicDependency(list(exc.args[1])) from None
    order: list[str] = []
    while ts.is_active():
        ready = sorted(ts.get_ready())
        order.extend(ready)
        ts.done(*ready)
    return order


def generate_catalog(descriptors: Iterable[ApiDescriptor]) -> str:
    descs = sorted(descriptors, key=lambda d: d.api_id)
    order = dependency_order(descs)
    if not descs:
        return ""
    denials = ",".join(d.value for d in Denial)
    lines = []
    for d in descs:
        rate = f"rate {d.rate_limit[0]}/{d.rate_limit[1]}" if d.rate_limit else "rate -"
        lines.append(f"API|{d.api_id}|{d.layer.value}|{d.backend}|{rate}")
        lines.append(f"PARAMS|{d.api_id}|{','.join(d.params)}")
        lines.append(f"DENIALS|{d.api_id}|{denials}")
    for d in descs:
        for dep in sorted(d.depends_on):
            lines.append(f"DEP|{d.api_id}|{dep}")
    lines.append(f"ORDER|{','.join(order)}")
    return "\n".join(lines) + "\n"


# -- topology ----------------------------------------------------------------------------

def dmz_violations(net: Network, gateway: str, protected: Iterable[str]) -> list[str]:
    """Ways EXTERNAL nodes can reach protected nodes without passing the gateway."""
    problems = []
    gw = net.nodes.get(gateway)
    if gw is None or gw.zone is not Zone.DMZ:
        problems.append(f"gateway {gateway} is not a DMZ node")
    externals = [n for n in net.nodes.values() if n.zone is Zone.EXTERNAL]
    for (a, b) in sorted(net.links):
        if net.nodes[a].zone is Zone.EXTERNAL and b != gateway and net.nodes[b].zone is not Zone.EXTERNAL:
            problems.append(f"external link {a}->{b} bypasses {gateway}")
    protected = list(protected)
    for ext in externals:
        reach = net.reachable(ext.name, blocked={gateway})
        for p in protected:
            if p in reach:
                problems.append(f"{ext.name} reaches {p} without {gateway}")
    return problems


COMPRESSED_AIR_API = ApiDescriptor(
    api_id="compressed-air",
    layer=Layer.EXPERIENCE,
    backend="platform.query",
    params=("compressor",),
    mediation=(
        FieldMap("pressure", "pressure_kpa", 100.0, 0.0),
        FieldMap("temperature", "temperature_c"),
        FieldMap("power", "power_kw"),
    ),
    depends_on=frozenset({"compressor-telemetry"}),
    rate_limit=(10, 1_000_000),
)
"""Compressed air offered as a metered service on top of compressor telemetry."""

COMPRESSOR_TELEMETRY_API = ApiDescriptor(
    api_id="compressor-telemetry",
    layer=Layer.SYSTEM,
    backend="platform.query",
    params=("compressor",),
)
