"""Lambda-style analytics: stream and batch views over an append-only master dataset.

Views are kept as monoidal aggregates (count, exact sum, max) per
``(tenant, device, sensor, bucket)``. Sums are stored as non-overlapping
float partials so merging batch and speed views gives the correctly
rounded total regardless of where the checkpoint splits the data.
"""

from __future__ import annotations

import bisect
import enum
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from iiotsim import _kernels
from iiotsim.model import Measurement, OriginPattern, encode_measurement

ViewKey = tuple[str, str, str, int]

DEFAULT_BUCKET_US = 60_000_000


class ViewKind(str, enum.Enum):
    COUNT = "COUNT"
    SUM = "SUM"
    MEAN = "MEAN"
    MAX = "MAX"


class ForkPlacement(str, enum.Enum):
    AFTER_PLATFORM = "AFTER_PLATFORM"
    BEFORE_PLATFORM_EDGE = "BEFORE_PLATFORM_EDGE"


class UnsupportedKind(ValueError):
    pass


@dataclass(frozen=True)
class ViewQuery:
    kind: ViewKind
    tenant_id: str
    device_id: str | None = None
    sensor_id: str | None = None
    bucket: int | None = None

    def matches(self, key: ViewKey) -> bool:
        t, d, s, b = key
        return (t == self.tenant_id
                and (self.device_id is None or d == self.device_id)
                and (self.sensor_id is None or s == self.sensor_id)
                and (self.bucket is None or b == self.bucket))


class ViewStore:
    """Growable columnar aggregate table indexed by view key."""

    def __init__(self, capacity: int = 64):
        self.index: dict[ViewKey, int] = {}
        self.keys: list[ViewKey] = []
        self._alloc(capacity)

    def _alloc(self, cap: int) -> None:
        self.counts = np.zeros(cap, dtype=np.int64)
        self.maxes = np.full(cap, -np.inf)
        self.partials = np.zeros((cap, _kernels.PARTIAL_SLOTS))
        self.nparts = np.zeros(cap, dtype=np.int64)

    def _grow(self, need: int) -> None:
        cap = self.counts.shape[0]
        if need <= cap:
            return
        new_cap = max(need, 2 * cap)
        old = (self.counts, self.maxes, self.partials, self.nparts)
        self._alloc(new_cap)
        self.counts[:cap], self.maxes[:cap], self.partials[:cap], self.nparts[:cap] = old

    def key_id(self, key: ViewKey) -> int:
        k = self.index.get(key)
        if k is None:
            k = self.index[key] = len(self.keys)
            self.keys.append(key)
            self._grow(len(self.keys))
        return k

    def reserve(self, n_keys: int) -> None:
        self._grow(n_keys)

    def apply(self, key_ids, values) -> None:
        _kernels.fold(key_ids, values, self.counts, self.maxes, self.partials, self.nparts)

    def __len__(self) -> int:
        return len(self.keys)

    def matching(self, query: ViewQuery) -> list[int]:
        return [i for key, i in self.index.items() if query.matches(key)]

    def snapshot(self) -> dict[ViewKey, tuple[int, float, float]]:
        """(count, sum, max) per key; handy for equality checks."""
        return {key: (int(self.counts[i]), math.fsum(self.partials[i, : self.nparts[i]]),
                      float(self.maxes[i]))
                for key, i in self.index.items()}


@dataclass
class _Partial:
    count: int = 0
    partials: list[float] = field(default_factory=list)
    max: float = -math.inf


def _collect(store: ViewStore, query: ViewQuery, acc: _Partial) -> None:
    for i in store.matching(query):
        acc.count += int(store.counts[i])
        acc.partials.extend(store.partials[i, : store.nparts[i]].tolist())
        acc.max = max(acc.max, float(store.maxes[i]))


class MasterDataset:
    """Append-only measurement log with strictly increasing sequence numbers."""

    def __init__(self, path: str | Path | None = None):
        self.seqs: list[int] = []
        self.records: list[Measurement] = []
        self.path = Path(path) if path else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_bytes(b"")

    @property
    def latest_seq(self) -> int:
        return self.seqs[-1] if self.seqs else 0

    def append(self, seq: int, m: Measurement) -> None:
        if seq <= self.latest_seq:
            raise ValueError("master dataset is append-only with increasing seq")
        self.seqs.append(seq)
        self.records.append(m)
        if self.path is not None:
            with self.path.open("ab") as fh:
                fh.write(encode_measurement(m))

    def __len__(self) -> int:
        return len(self.records)

    def position_after(self, seq: int) -> int:
        """Index of the first record with sequence number > seq."""
        return bisect.bisect_right(self.seqs, seq)


class LambdaPipeline:
    def __init__(self, bucket_us: int = DEFAULT_BUCKET_US,
                 placement: ForkPlacement = ForkPlacement.AFTER_PLATFORM,
                 master_path: str | Path | None = None):
        if bucket_us <= 0:
            raise ValueError("bucket_us must be > 0")
        self.bucket_us = bucket_us
        self.placement = ForkPlacement(placement)
        self.master = MasterDataset(master_path)
        self.batch = ViewStore()
        self.speed = ViewStore()
        self.checkpoint_seq = 0
        self.ingested = 0
        self.speed_applied = 0
        self.duplicates = 0

    def view_key(self, m: Measurement) -> ViewKey:
        return (m.tenant_id, m.device_id, m.sensor_id, m.timestamp_us // self.bucket_us)

    def fork_ingest(self, m: Measurement, seq: int | None = None) -> bool:
        """Append to master and apply to the speed layer; False for a duplicate seq."""
        if seq is None:
            seq = self.master.latest_seq + 1
        if seq <= self.master.latest_seq:
            self.duplicates += 1
            return False
        self.master.append(seq, m)
        k = self.speed.key_id(self.view_key(m))
        self.speed.apply(np.array([k]), np.array([float(m.value)]))
        self.ingested += 1
        self.speed_applied += 1
        return True

    def _fold(self, records: list[Measurement]) -> ViewStore:
        store = ViewStore(max(64, len(records) // 4))
        if records:
            ids = np.fromiter((store.key_id(self.view_key(m)) for m in records),
                              dtype=np.int64, count=len(records))
            vals = np.fromiter((float(m.value) for m in records), dtype=np.float64,
                               count=len(records))
            store.apply(ids, vals)
        return store

    def batch_recompute(self, upto_seq: int | None = None) -> int:
        """Rebuild batch views from master[..upto_seq]; speed keeps only newer data."""
        latest = self.master.latest_seq
        upto = latest if upto_seq is None else min(int(upto_seq), latest)
        if upto < self.checkpoint_seq:
            raise ValueError("checkpoint_seq is monotone")
        cut = self.master.position_after(upto)
        self.batch = self._fold(self.master.records[:cut])
        self.speed = self._fold(self.master.records[cut:])
        self.checkpoint_seq = upto
        return upto

    def serve(self, query: ViewQuery) -> float | int | None:
        try:
            kind = ViewKind(query.kind)
        except ValueError:
            raise UnsupportedKind(str(query.kind)) from None
        acc = _Partial()
        _collect(self.batch, query, acc)
        _collect(self.speed, query, acc)
        if kind is ViewKind.COUNT:
            return acc.count
        if kind is ViewKind.SUM:
            return math.fsum(acc.partials)
        if acc.count == 0:
            return None
        if kind is ViewKind.MAX:
            return acc.max
        return math.fsum(acc.partials) / acc.count


# -- throughput harness -------------------------------------------------------

SMALL_PLANT_RATE = 2_400_000
FLEET_TARGET_RATE = 182_000_000


def nominal_record_bytes() -> int:
    sample = Measurement("plant-01", "dev-000123", "sensor-07", 1_234_567_890, 1234.56789,
                         "degC", OriginPattern.STANDARD_AGENT)
    return len(encode_measurement(sample))


@dataclass
class ThroughputReport:
    rate_bytes_per_s: float
    duration_s: float
    tick_s: float
    record_bytes: int
    records: int
    bytes: int
    depth_at_arrival: list[int]
    window_max_depth: list[int]
    max_depth: int
    p99_apply_latency_us: float
    achieved_bytes_per_s: float
    sustained: bool
    backend: str

    def summary(self) -> str:
        verdict = "sustained" if self.sustained else "NOT sustained"
        return (f"{self.rate_bytes_per_s / 1e6:.1f} MB/s for {self.duration_s:g} s: {verdict}; "
                f"capacity {self.achieved_bytes_per_s / 1e6:.1f} MB/s, max depth {self.max_depth}, "
                f"p99 {self.p99_apply_latency_us:.0f} us [{self.backend}]")


def throughput_harness(rate_bytes_per_s: float, duration_s: float, *, tick_s: float = 0.1,
                       n_keys: int = 4096, seed: int = 0, tail_s: float = 30.0,
                       tail_windows: int = 3, keep_master: bool = True) -> ThroughputReport:
    """Drive the speed layer at a target byte rate and watch the backlog.

    Arrivals follow the virtual clock (one micro-batch per ``tick_s``); service
    times are measured on the host. The queue is replayed with the Lindley
    recursion, so a 60 s target does not take 60 s of wall time unless the
    host is slower than the stream.
    """
    rec_bytes = nominal_record_bytes()
    rng = np.random.default_rng(seed)
    n_ticks = int(round(duration_s / tick_s))
    store = ViewStore(n_keys)
    for k in range(n_keys):
        store.key_id(("plant", f"dev{k // 16}", f"s{k % 16}", 0))
    # warm the kernel outside the measurement
    store.apply(np.zeros(0, dtype=np.int64), np.zeros(0))
    master_keys: list[np.ndarray] = []
    master_vals: list[np.ndarray] = []

    carry = 0.0
    arrivals = np.arange(n_ticks) * tick_s
    sizes = np.zeros(n_ticks, dtype=np.int64)
    service = np.zeros(n_ticks)
    for i in range(n_ticks):
        carry += rate_bytes_per_s * tick_s / rec_bytes
        n = int(carry)
        carry -= n
        sizes[i] = n
        keys = rng.integers(0, n_keys, size=n)
        vals = rng.normal(50.0, 10.0, size=n)
        t0 = time.perf_counter()
        store.apply(keys, vals)
        if keep_master:
            master_keys.append(keys.astype(np.int32))
            master_vals.append(vals.copy())
        service[i] = time.perf_counter() - t0

    finish = np.zeros(n_ticks)
    prev = 0.0
    for i in range(n_ticks):
        prev = max(arrivals[i], prev) + service[i]
        finish[i] = prev
    # records still queued or in service just before each arrival
    depth = []
    for i in range(n_ticks):
        waiting = 0
        j = i - 1
        while j >= 0 and finish[j] > arrivals[i]:
            waiting += int(sizes[j])
            j -= 1
        depth.append(waiting)

    tail_start = max(0, n_ticks - int(round(tail_s / tick_s)))
    tail = depth[tail_start:]
    chunks = np.array_split(np.array(tail, dtype=np.int64), tail_windows) if tail else []
    window_max = [int(c.max()) if c.size else 0 for c in chunks]
    non_increasing = all(a >= b for a, b in zip(window_max, window_max[1:]))
    total_records = int(sizes.sum())
    busy = float(service.sum())
    sojourn_us = (finish - arrivals) * 1e6
    return ThroughputReport(
        rate_bytes_per_s=rate_bytes_per_s,
        duration_s=duration_s,
        tick_s=tick_s,
        record_bytes=rec_bytes,
        records=total_records,
        bytes=total_records * rec_bytes,
        depth_at_arrival=depth,
        window_max_depth=window_max,
        max_depth=max(depth) if depth else 0,
        p99_apply_latency_us=float(np.percentile(sojourn_us, 99)) if n_ticks else 0.0,
        achieved_bytes_per_s=(total_records * rec_bytes / busy) if busy > 0 else math.inf,
        sustained=non_increasing and int(store.counts.sum()) == total_records,
        backend=_kernels.backend(),
    )
