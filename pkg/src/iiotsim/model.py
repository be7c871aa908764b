"""Domain types and canonical wire formats shared by every subsystem.

Two bit-exact formats live here:

* the north-bound measurement line
  ``MEAS|tenant|device|sensor|ts_us|value|unit|pattern\\n``
* the 10-byte simulated fieldbus frame
  ``A5 | unit_id | register (BE16) | raw_value (BE i32) | crc (LE16)``
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Any

from iiotsim import _kernels


class OriginPattern(str, enum.Enum):
    PLATFORM_SIDE_AGENT = "PLATFORM_SIDE_AGENT"
    DEVICE_AGENT = "DEVICE_AGENT"
    DEVICE_LIBS = "DEVICE_LIBS"
    STANDARD_AGENT = "STANDARD_AGENT"
    OPC_UA_AGENT = "OPC_UA_AGENT"
    SPECIAL_GATEWAY_AGENT = "SPECIAL_GATEWAY_AGENT"
    HW_INTERCEPT = "HW_INTERCEPT"
    NATIVE = "native"


class InvalidMeasurement(ValueError):
    pass


class FrameError(ValueError):
    """Base class for fieldbus decode failures."""


class BadSync(FrameError):
    pass


class BadCrc(FrameError):
    pass


class ShortFrame(FrameError):
    pass


MAX_UNIT_LEN = 16
_FORBIDDEN_ID_CHARS = ("|", "\n", "\r")


def _check_token(name: str, value: str) -> None:
    if not isinstance(value, str) or not value:
        raise InvalidMeasurement(f"{name} must be a non-empty string")
    if any(c in value for c in _FORBIDDEN_ID_CHARS):
        raise InvalidMeasurement(f"{name} contains a reserved character: {value!r}")


@dataclass(frozen=True)
class Measurement:
    tenant_id: str
    device_id: str
    sensor_id: str
    timestamp_us: int
    value: float
    unit: str
    origin_pattern: OriginPattern = OriginPattern.NATIVE

    def __post_init__(self) -> None:
        if not isinstance(self.origin_pattern, OriginPattern):
            try:
                object.__setattr__(self, "origin_pattern", OriginPattern(self.origin_pattern))
            except ValueError as exc:
                raise InvalidMeasurement(str(exc)) from None
        self.validate()

    def validate(self) -> None:
        for name in ("tenant_id", "device_id", "sensor_id", "unit"):
            _check_token(name, getattr(self, name))
        if len(self.unit) > MAX_UNIT_LEN:
            raise InvalidMeasurement(f"unit longer than {MAX_UNIT_LEN} chars: {self.unit!r}")
        if isinstance(self.timestamp_us, bool) or not isinstance(self.timestamp_us, int):
            raise InvalidMeasurement("timestamp_us must be an integer")
        if self.timestamp_us < 0:
            raise InvalidMeasurement("timestamp_us must be >= 0")
        if not isinstance(self.value, (int, float)) or not math.isfinite(self.value):
            raise InvalidMeasurement(f"value must be finite, got {self.value!r}")

    def payload(self) -> tuple[str, str, str, int, float, str]:
        """Fields that must not depend on how the reading reached the platform."""
        return (self.tenant_id, self.device_id, self.sensor_id, self.timestamp_us,
                float(self.value), self.unit)

    def replace(self, **changes: Any) -> Measurement:
        data = {f: getattr(self, f) for f in self.__dataclass_fields__}
        data.update(changes)
        return Measurement(**data)


SIG_DIGITS = 9


def format_value(value: float) -> str:
    """Render ``value`` with 9 significant digits.

    Fixed-point notation is used for magnitudes in [1e-6, 1e15); anything
    outside falls back to scientific notation with the same precision.
    """
    value = float(value)
    if value == 0.0:
        return "0." + "0" * (SIG_DIGITS - 1)
    exponent = int(f"{value:.{SIG_DIGITS - 1}e}".split("e")[1])
    if exponent < -6 or exponent >= 15:
        return f"{value:.{SIG_DIGITS - 1}e}"
    decimals = max(0, SIG_DIGITS - 1 - exponent)
    return f"{value:.{decimals}f}"


def quantize_value(value: float) -> float:
    """Round to the precision that survives :func:`format_value`."""
    return float(format_value(value))


def encode_measurement(m: Measurement) -> bytes:
    m.validate()
    return (
        f"MEAS|{m.tenant_id}|{m.device_id}|{m.sensor_id}|{m.timestamp_us}|"
        f"{format_value(m.value)}|{m.unit}|{m.origin_pattern.value}\n"
    ).encode("utf-8")


def decode_measurement(line: bytes | str) -> Measurement:
    text = line.decode("utf-8") if isinstance(line, (bytes, bytearray)) else line
    text = text.rstrip("\n")
    parts = text.split("|")
    if len(parts) != 8 or parts[0] != "MEAS":
        raise InvalidMeasurement(f"malformed measurement line: {text!r}")
    _, tenant, device, sensor, ts, value, unit, pattern = parts
    try:
        ts_us = int(ts)
        val = float(value)
    except ValueError as exc:
        raise InvalidMeasurement(str(exc)) from None
    return Measurement(tenant, device, sensor, ts_us, val, unit, OriginPattern(pattern))


class CommandVerb(str, enum.Enum):
    STOP = "STOP"
    RESUME = "RESUME"
    SET_PARAM = "SET_PARAM"
    UPDATE_CONFIG = "UPDATE_CONFIG"


@dataclass(frozen=True)
class Command:
    device_id: str
    verb: CommandVerb
    issued_at_us: int
    payload: dict[str, str] = field(default_factory=dict)
    deadline_us: int | None = None

    def __post_init__(self) -> None:
        if self.deadline_us is not None and self.deadline_us <= self.issued_at_us:
            raise ValueError("deadline_us must be later than issued_at_us")

    def encode(self) -> bytes:
        kv = ",".join(f"{k}={v}" for k, v in sorted(self.payload.items()))
        deadline = "" if self.deadline_us is None else str(self.deadline_us)
        return f"CMD|{self.device_id}|{self.verb.value}|{self.issued_at_us}|{deadline}|{kv}\n".encode()

    @classmethod
    def decode(cls, line: bytes) -> Command:
        _, device, verb, issued, deadline, kv = line.decode().rstrip("\n").split("|")
        payload = dict(item.split("=", 1) for item in kv.split(",") if item)
        return cls(device, CommandVerb(verb), int(issued), payload,
                   int(deadline) if deadline else None)


# -- fieldbus frame ---------------------------------------------------------

FRAME_SYNC = 0xA5
FRAME_LEN = 10
_FRAME_BODY = struct.Struct(">BBHi")


def crc16_modbus(data: bytes) -> int:
    """CRC-16/MODBUS (reflected poly 0x8005, init 0xFFFF, no final xor)."""
    return _kernels.crc16(data)


@dataclass(frozen=True)
class FieldbusFrame:
    unit_id: int
    register: int
    raw_value: int

    def __post_init__(self) -> None:
        if not 0 <= self.unit_id <= 0xFF:
            raise ValueError(f"unit_id out of range: {self.unit_id}")
        if not 0 <= self.register <= 0xFFFF:
            raise ValueError(f"register out of range: {self.register}")
        if not -(2**31) <= self.raw_value < 2**31:
            raise ValueError(f"raw_value out of int32 range: {self.raw_value}")


def encode_fieldbus_frame(unit_id: int, register: int, raw_value: int) -> bytes:
    frame = FieldbusFrame(unit_id, register, raw_value)
    body = _FRAME_BODY.pack(FRAME_SYNC, frame.unit_id, frame.register, frame.raw_value)
    return body + struct.pack("<H", crc16_modbus(body))


def decode_fieldbus_frame(data: bytes) -> FieldbusFrame:
    if len(data) < FRAME_LEN:
        raise ShortFrame(f"expected {FRAME_LEN} bytes, got {len(data)}")
    data = bytes(data[:FRAME_LEN])
    if data[0] != FRAME_SYNC:
        raise BadSync(f"sync byte 0x{data[0]:02X}")
    (crc,) = struct.unpack("<H", data[8:])
    if crc != crc16_modbus(data[:8]):
        raise BadCrc(f"crc mismatch 0x{crc:04X}")
    _, unit_id, register, raw = _FRAME_BODY.unpack(data[:8])
    return FieldbusFrame(unit_id, register, raw)


# -- latency budget and plant sizing ----------------------------------------

@dataclass(frozen=True)
class LatencyBudget:
    duty_cycle_ms: float = 10.0
    reaction_deadline_ms: float = 500.0
    uplink_interval_ms: float = 200.0

    def __post_init__(self) -> None:
        if not 4 <= self.duty_cycle_ms <= 20:
            raise ValueError("duty_cycle_ms must lie in [4, 20]")
        if not self.reaction_deadline_ms > self.uplink_interval_ms > 0:
            raise ValueError("need reaction_deadline_ms > uplink_interval_ms > 0")


class SizeClass(str, enum.Enum):
    SMALL = "SMALL"
    MEDIUM = "MEDIUM"
    LARGE = "LARGE"


@dataclass(frozen=True)
class PlantProfile:
    size_class: SizeClass
    sensor_count: int
    control_system_count: int
    gateway_count: int
    daily_data_gb: float


# (lower, upper, lower_inclusive, upper_inclusive); None = unbounded
_Band = tuple[float | None, float | None, bool, bool]

PLANT_BANDS: dict[SizeClass, dict[str, _Band]] = {
    SizeClass.SMALL: {
        "sensor_count": (None, 50_000, False, False),
        "control_system_count": (None, 2_000, False, False),
        "gateway_count": (None, 50, False, False),
        "daily_data_gb": (None, 200, False, False),
    },
    SizeClass.MEDIUM: {
        "sensor_count": (50_000, 80_000, True, True),
        "control_system_count": (2_000, 4_000, True, True),
        "gateway_count": (50, 100, True, True),
        "daily_data_gb": (200, 300, True, True),
    },
    SizeClass.LARGE: {
        "sensor_count": (80_000, None, False, False),
        "control_system_count": (4_000, None, False, False),
        "gateway_count": (100, None, False, False),
        "daily_data_gb": (300, None, False, False),
    },
}


def _in_band(value: float, band: _Band) -> bool:
    lo, hi, lo_inc, hi_inc = band
    if lo is not None and (value < lo or (value == lo and not lo_inc)):
        return False
    if hi is not None and (value > hi or (value == hi and not hi_inc)):
        return False
    return True


def validate_plant_profile(p: PlantProfile) -> list[str]:
    """Return the names of fields that fall outside the band for ``p.size_class``."""
    bands = PLANT_BANDS[SizeClass(p.size_class)]
    return [name for name, band in bands.items() if not _in_band(getattr(p, name), band)]
