"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``IIOTSIM_DISABLE_NUMBA=1`` to force the numpy implementations (also
used automatically when numba cannot be imported). Both paths are always
importable as ``*_numpy`` / ``*_numba`` so they can be compared directly.
"""

from __future__ import annotations

import math
import os

import numpy as np

PARTIAL_SLOTS = 64
"""Capacity of the exact-sum partials row kept per view key.

Non-overlapping double partials never exceed ~40 for finite inputs.
"""

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("IIOTSIM_DISABLE_NUMBA", "").lower() not in {
    "1", "true", "yes", "on",
}


def _make_crc_table() -> np.ndarray:
    table = np.zeros(256, dtype=np.uint16)
    for i in range(256):
        crc = i
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
        table[i] = crc
    return table


CRC_TABLE = _make_crc_table()
_CRC_TABLE_LIST = [int(x) for x in CRC_TABLE]


# -- numpy / python fallbacks ----------------------------------------------

def crc16_numpy(data: bytes) -> int:
    crc = 0xFFFF
    table = _CRC_TABLE_LIST
    for b in bytes(data):
        crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF]
    return crc


def crc16_rows_numpy(rows: np.ndarray) -> np.ndarray:
    """CRC of every row of a 2-D uint8 array, vectorised across rows."""
    rows = np.asarray(rows, dtype=np.uint8)
    crc = np.full(rows.shape[0], 0xFFFF, dtype=np.uint16)
    for col in range(rows.shape[1]):
        idx = (crc ^ rows[:, col]) & 0xFF
        crc = (crc >> 8) ^ CRC_TABLE[idx]
    return crc


def exact_partials(values: list[float]) -> list[float]:
    """Non-overlapping floats whose exact sum equals ``sum(values)`` exactly."""
    out: list[float] = []
    while True:
        r = math.fsum(values + [-p for p in out])
        if r == 0.0:
            return out
        out.append(r)


def fold_numpy(keys, values, counts, maxes, partials, nparts) -> None:
    keys = np.asarray(keys, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if keys.size == 0:
        return
    np.add.at(counts, keys, 1)
    np.maximum.at(maxes, keys, values)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    sv = values[order]
    bounds = np.flatnonzero(np.diff(sk)) + 1
    starts = np.concatenate(([0], bounds))
    ends = np.concatenate((bounds, [sk.size]))
    for s, e in zip(starts.tolist(), ends.tolist()):
        k = int(sk[s])
        n = int(nparts[k])
        merged = exact_partials(partials[k, :n].tolist() + sv[s:e].tolist())
        if len(merged) > partials.shape[1]:
            raise OverflowError("exact-sum partials exhausted")
        partials[k, : len(merged)] = merged
        nparts[k] = len(merged)


def slope_numpy(t, v) -> float:
    t = np.asarray(t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if t.size < 2:
        return 0.0
    dt = t - t.mean()
    denom = float(np.dot(dt, dt))
    if denom == 0.0:
        return 0.0
    return float(np.dot(dt, v - v.mean()) / denom)


# -- numba versions ---------------------------------------------------------

crc16_numba = None
crc16_rows_numba = None
fold_numba = None
slope_numba = None

if HAVE_NUMBA:

    @njit(cache=True)
    def _crc16_nb(data, table):
        crc = np.uint16(0xFFFF)
        for i in range(data.shape[0]):
            crc = (crc >> np.uint16(8)) ^ table[(crc ^ data[i]) & 0xFF]
        return crc

    @njit(cache=True)
    def _crc16_rows_nb(rows, table):
        out = np.empty(rows.shape[0], dtype=np.uint16)
        for r in range(rows.shape[0]):
            out[r] = _crc16_nb(rows[r], table)
        return out

    @njit(cache=True)
    def _grow_partials(row, n, x):
        i = 0
        for j in range(n):
            y = row[j]
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo != 0.0:
                row[i] = lo
                i += 1
            x = hi
        row[i] = x
        return i + 1

    @njit(cache=True)
    def _fold_nb(keys, values, counts, maxes, partials, nparts):
        cap = partials.shape[1]
        for i in range(keys.shape[0]):
            k = keys[i]
            x = values[i]
            counts[k] += 1
            if x > maxes[k]:
                maxes[k] = x
            if nparts[k] >= cap:
                return k
            nparts[k] = _grow_partials(partials[k], nparts[k], x)
        return -1

    @njit(cache=True)
    def _slope_nb(t, v):
        n = t.shape[0]
        if n < 2:
            return 0.0
        tm = 0.0
        vm = 0.0
        for i in range(n):
            tm += t[i]
            vm += v[i]
        tm /= n
        vm /= n
        num = 0.0
        den = 0.0
        for i in range(n):
            d = t[i] - tm
            num += d * (v[i] - vm)
            den += d * d
        if den == 0.0:
            return 0.0
        return num / den

    def crc16_numba(data: bytes) -> int:
        return int(_crc16_nb(np.frombuffer(bytes(data), dtype=np.uint8), CRC_TABLE))

    def crc16_rows_numba(rows: np.ndarray) -> np.ndarray:
        return _crc16_rows_nb(np.ascontiguousarray(rows, dtype=np.uint8), CRC_TABLE)

    def fold_numba(keys, values, counts, maxes, partials, nparts) -> None:
        bad = _fold_nb(np.asarray(keys, dtype=np.int64), np.asarray(values, dtype=np.float64),
                       counts, maxes, partials, nparts)
        if bad >= 0:
            raise OverflowError("exact-sum partials exhausted")

    def slope_numba(t, v) -> float:
        return float(_slope_nb(np.asarray(t, dtype=np.float64), np.asarray(v, dtype=np.float64)))


if USE_NUMBA:
    crc16_rows = crc16_rows_numba
    fold = fold_numba
    slope = slope_numba
else:
    crc16_rows = crc16_rows_numpy
    fold = fold_numpy
    slope = slope_numpy

# Single short frames: interpreter overhead of the numba call outweighs the loop.
crc16 = crc16_numpy


def backend() -> str:
    return f"numba {numba.__version__}" if USE_NUMBA else "numpy"
