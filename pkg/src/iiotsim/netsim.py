"""Deterministic discrete-event scheduler and point-to-point network.

Everything runs on a single virtual timeline measured in integer
microseconds. Events are ordered by ``(fire_at_us, seq)`` so two runs with
the same scenario and seed replay the exact same trace.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import math
import random
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

INFINITE_BANDWIDTH = math.inf


class EdgeTier(enum.IntEnum):
    """Placement along the edge continuum, ordered by distance from the device."""

    DEVICE = 0
    GATEWAY = 1
    FACTORY_EDGE = 2
    REGIONAL_EDGE = 3
    CLOUD = 4


class Zone(str, enum.Enum):
    INTERNAL = "INTERNAL"
    DMZ = "DMZ"
    EXTERNAL = "EXTERNAL"


class NoRoute(LookupError):
    pass


@dataclass(frozen=True)
class Link:
    from_node: str
    to_node: str
    one_way_latency_us: int
    bandwidth_bytes_per_s: float = INFINITE_BANDWIDTH
    loss_probability: float = 0.0
    jitter_us: int = 0

    def __post_init__(self) -> None:
        if self.one_way_latency_us < 0:
            raise ValueError("latency must be >= 0")
        if not self.bandwidth_bytes_per_s > 0:
            raise ValueError("bandwidth must be > 0")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss_probability must lie in [0, 1]")
        if self.jitter_us < 0:
            raise ValueError("jitter must be >= 0")

    def serialization_us(self, size: int) -> int:
        if size <= 0 or math.isinf(self.bandwidth_bytes_per_s):
            return 0
        bw = self.bandwidth_bytes_per_s
        if float(bw).is_integer():
            bw = int(bw)
            return -(-size * 1_000_000 // bw)
        return math.ceil(size * 1_000_000 / bw)


@dataclass(order=True)
class Event:
    fire_at_us: int
    seq: int
    target_node: str = field(compare=False)
    payload: bytes = field(compare=False, default=b"")
    kind: str = field(compare=False, default="msg")
    source_node: str | None = field(compare=False, default=None)
    callback: Callable[[Event], Any] | None = field(compare=False, default=None, repr=False)
    meta: Any = field(compare=False, default=None, repr=False)


Handler = Callable[[Event], Any]


class Scheduler:
    """Single-timeline event queue with a monotone tiebreak counter."""

    def __init__(self, seed: int = 0, keep_trace: bool = True):
        self.seed = seed
        self.now_us = 0
        self._queue: list[Event] = []
        self._seq = 0
        self.processed = 0
        self.keep_trace = keep_trace
        self.trace: list[tuple[int, int, str, str, str]] = []
        self._hasher = hashlib.sha256()

    def schedule(self, at_us: int, target: str, callback: Handler, payload: bytes = b"",
                 kind: str = "timer", source: str | None = None, meta: Any = None) -> Event:
        if at_us < self.now_us:
            raise ValueError(f"cannot schedule in the past ({at_us} < {self.now_us})")
        ev = Event(int(at_us), self._seq, target, payload, kind, source, callback, meta)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def call_later(self, delay_us: int, target: str, callback: Handler, **kw) -> Event:
        return self.schedule(self.now_us + int(delay_us), target, callback, **kw)

    def pending(self) -> int:
        return len(self._queue)

    def next_time(self) -> int | None:
        return self._queue[0].fire_at_us if self._queue else None

    def _record(self, ev: Event) -> None:
        digest = hashlib.blake2b(ev.payload, digest_size=8).hexdigest()
        row = (ev.fire_at_us, ev.seq, ev.target_node, ev.kind, digest)
        self._hasher.update(repr(row).encode())
        if self.keep_trace:
            self.trace.append(row)

    def run_until(self, t_end_us: int) -> int:
        """Process every event with ``fire_at_us <= t_end_us``; the clock ends at ``t_end_us``."""
        count = 0
        q = self._queue
        while q and q[0].fire_at_us <= t_end_us:
            ev = heapq.heappop(q)
            self.now_us = ev.fire_at_us
            self._record(ev)
            if ev.callback is not None:
                ev.callback(ev)
            count += 1
        self.now_us = max(self.now_us, int(t_end_us))
        self.processed += count
        return count

    def trace_hash(self) -> str:
        return self._hasher.hexdigest()


def substream(seed: int, *labels: str) -> random.Random:
    """RNG derived from the scenario seed and a label path.

    Adding a new link or node never perturbs the draws of existing ones.
    """
    h = hashlib.sha256(repr((seed, labels)).encode()).digest()
    return random.Random(int.from_bytes(h[:8], "big"))


@dataclass
class Node:
    name: str
    tier: EdgeTier = EdgeTier.DEVICE
    zone: Zone = Zone.INTERNAL
    handler: Handler | None = None


class Network:
    """Nodes connected by directed links, delivering payloads via a scheduler."""

    def __init__(self, scheduler: Scheduler):
        self.sched = scheduler
        self.nodes: dict[str, Node] = {}
        self.links: dict[tuple[str, str], Link] = {}
        self._rngs: dict[tuple[str, str], random.Random] = {}
        self.sent = 0
        self.delivered = 0
        self.dropped = 0
        self.bytes_sent = 0

    def add_node(self, name: str, tier: EdgeTier = EdgeTier.DEVICE, zone: Zone = Zone.INTERNAL,
                 handler: Handler | None = None) -> Node:
        node = self.nodes.get(name)
        if node is None:
            node = self.nodes[name] = Node(name, EdgeTier(tier), Zone(zone), handler)
        elif handler is not None:
            node.handler = handler
        return node

    def set_handler(self, name: str, handler: Handler) -> None:
        self.nodes[name].handler = handler

    def add_link(self, link: Link, bidirectional: bool = False) -> None:
        for end in (link.from_node, link.to_node):
            if end not in self.nodes:
                self.add_node(end)
        self.links[(link.from_node, link.to_node)] = link
        if bidirectional:
            rev = Link(link.to_node, link.from_node, link.one_way_latency_us,
                       link.bandwidth_bytes_per_s, link.loss_probability, link.jitter_us)
            self.links[(rev.from_node, rev.to_node)] = rev

    def link(self, a: str, b: str) -> Link:
        try:
            return self.links[(a, b)]
        except KeyError:
            raise NoRoute(f"no link {a} -> {b}") from None

    def _rng(self, a: str, b: str) -> random.Random:
        rng = self._rngs.get((a, b))
        if rng is None:
            rng = self._rngs[(a, b)] = substream(self.sched.seed, "link", a, b)
        return rng

    def delivery_time(self, a: str, b: str, size: int, now_us: int) -> int | None:
        """Arrival time for a payload of ``size`` bytes, or None if the draw drops it."""
        link = self.link(a, b)
        rng = self._rng(a, b)
        if link.loss_probability > 0.0 and rng.random() < link.loss_probability:
            return None
        jitter = rng.randint(0, link.jitter_us) if link.jitter_us else 0
        return now_us + link.one_way_latency_us + link.serialization_us(size) + jitter

    def send(self, a: str, b: str, payload: bytes, now_us: int | None = None,
             kind: str = "msg", on_deliver: Handler | None = None,
             meta: Any = None) -> Event | None:
        """Schedule delivery of ``payload`` over link a->b; returns None when dropped."""
        now = self.sched.now_us if now_us is None else now_us
        at = self.delivery_time(a, b, len(payload), now)
        self.sent += 1
        self.bytes_sent += len(payload)
        if at is None:
            self.dropped += 1
            return None

        def deliver(ev: Event) -> None:
            self.delivered += 1
            handler = on_deliver or self.nodes[b].handler
            if handler is not None:
                handler(ev)

        return self.sched.schedule(at, b, deliver, payload=payload, kind=kind, source=a, meta=meta)

    def in_flight(self) -> int:
        return self.sent - self.delivered - self.dropped

    def measure_rtt(self, a: str, b: str) -> int:
        return self.link(a, b).one_way_latency_us + self.link(b, a).one_way_latency_us

    def reachable(self, start: str, blocked: set[str] = frozenset()) -> set[str]:
        seen = {start}
        stack = [start]
        adj: dict[str, list[str]] = {}
        for a, b in self.links:
            adj.setdefault(a, []).append(b)
        while stack:
            cur = stack.pop()
            if cur in blocked and cur != start:
                continue
            for nxt in adj.get(cur, ()):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return seen
