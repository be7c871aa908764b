"""Messaging policies and battery-lifetime estimates for LPWAN devices."""

from __future__ import annotations

import csv
import enum
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

US_PER_S = 1_000_000
US_PER_DAY = 86_400 * US_PER_S
DAYS_PER_YEAR = 365


class PolicyKind(str, enum.Enum):
    FIXED_DAILY = "FIXED_DAILY"
    MOTION_ADAPTIVE = "MOTION_ADAPTIVE"


class MotionState(str, enum.Enum):
    MOVING = "MOVING"
    STATIONARY = "STATIONARY"


class SendReason(str, enum.Enum):
    CADENCE = "CADENCE"
    MOTION_START = "MOTION_START"


class UnorderedTrace(ValueError):
    pass


class ZeroDrain(ArithmeticError):
    """Nothing drains the battery: the lifetime is unbounded."""


class PayloadCheck(str, enum.Enum):
    OK = "OK"
    TOO_LARGE = "TooLarge"


@dataclass(frozen=True)
class MessagingPolicy:
    kind: PolicyKind = PolicyKind.FIXED_DAILY
    messages_per_day: int = 1
    max_payload_bytes: int = 99
    stationary_interval_us: int = 12 * 3600 * US_PER_S
    moving_interval_us: int = 15 * 60 * US_PER_S
    send_on_motion_start: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if self.stationary_interval_us <= 0 or self.moving_interval_us <= 0:
            raise ValueError("intervals must be > 0")
        if self.max_payload_bytes < 1:
            raise ValueError("max_payload_bytes must be >= 1")
        if self.kind is PolicyKind.FIXED_DAILY and self.messages_per_day < 0:
            raise ValueError("messages_per_day must be >= 0")


WATER_METER = MessagingPolicy(PolicyKind.FIXED_DAILY, messages_per_day=1, max_payload_bytes=99)
FREIGHT_WAGON = MessagingPolicy(PolicyKind.MOTION_ADAPTIVE)


@dataclass(frozen=True)
class EnergyModel:
    """Abstract energy units; only ratios matter."""

    battery_budget: float = 18_250.0
    per_message_cost: float = 8.0
    idle_cost_per_day: float = 2.0

    def __post_init__(self) -> None:
        if self.battery_budget <= 0:
            raise ValueError("battery_budget must be > 0")
        if self.per_message_cost < 0 or self.idle_cost_per_day < 0:
            raise ValueError("costs must be >= 0")


@dataclass(frozen=True)
class ProtocolProfile:
    name: str
    range_km: float
    bandwidth_bytes_per_s: float
    per_message_overhead_bytes: int

    def __post_init__(self) -> None:
        if self.range_km <= 0 or self.bandwidth_bytes_per_s <= 0:
            raise ValueError("range and bandwidth must be positive")

    def airtime_us(self, payload_bytes: int) -> int:
        total = payload_bytes + self.per_message_overhead_bytes
        return math.ceil(total * US_PER_S / self.bandwidth_bytes_per_s)


# Illustrative range/bandwidth points; editable config, not measured data.
PROTOCOL_PROFILES: dict[str, ProtocolProfile] = {
    "NB-IoT-like": ProtocolProfile("NB-IoT-like", 10.0, 3_125.0, 40),
    "LoRa-like": ProtocolProfile("LoRa-like", 15.0, 680.0, 13),
    "LTE-M-like": ProtocolProfile("LTE-M-like", 8.0, 125_000.0, 60),
    "WiFi-like": ProtocolProfile("WiFi-like", 0.1, 6_250_000.0, 58),
    "BLE-like": ProtocolProfile("BLE-like", 0.05, 125_000.0, 14),
}


@dataclass(frozen=True)
class Transmission:
    time_us: int
    reason: SendReason


def _check_trace(trace: Sequence[tuple[int, MotionState]]) -> list[tuple[int, MotionState]]:
    out = []
    prev = -1
    for t, state in trace:
        if t < 0 or t < prev:
            raise UnorderedTrace(f"transition at {t} after {prev}")
        prev = t
        out.append((int(t), MotionState(state)))
    return out


def next_transmissions(policy: MessagingPolicy, motion_trace: Sequence[tuple[int, MotionState]],
                       horizon_us: int) -> list[Transmission]:
    """Send times up to ``horizon_us``, ordered; t=0 appears only for a motion start.

    The device starts STATIONARY at t=0 with its timer reset. The cadence
    timer resets on every send and on every state change. A cadence deadline
    that falls exactly on a transition still fires under the old state,
    except that a motion-start send at the same instant replaces it.
    """
    if policy.kind is PolicyKind.FIXED_DAILY:
        n = policy.messages_per_day
        if n <= 0:
            return []
        out = []
        k = 1
        while True:
            t = k * US_PER_DAY // n
            if t > horizon_us:
                return out
            out.append(Transmission(t, SendReason.CADENCE))
            k += 1

    trace = _check_trace(motion_trace)
    sends: list[Transmission] = []
    state = MotionState.STATIONARY
    last_reset = 0
    i = 0
    # transitions at t=0 define the initial state without counting as a change
    while i < len(trace) and trace[i][0] == 0:
        if trace[i][1] is not state and trace[i][1] is MotionState.MOVING:
            state = MotionState.MOVING
            if policy.send_on_motion_start:
                sends.append(Transmission(0, SendReason.MOTION_START))
        else:
            state = trace[i][1]
        i += 1

    def interval() -> int:
        return policy.moving_interval_us if state is MotionState.MOVING else policy.stationary_interval_us

    while True:
        due = last_reset + interval()
        nxt = trace[i][0] if i < len(trace) else None
        if nxt is not None and nxt <= horizon_us and nxt <= due:
            new_state = trace[i][1]
            i += 1
            motion_start = new_state is MotionState.MOVING and state is MotionState.STATIONARY
            if nxt == due and not (motion_start and policy.send_on_motion_start):
                sends.append(Transmission(due, SendReason.CADENCE))
            if new_state is state:
                if nxt == due:
                    last_reset = due
                continue
            state = new_state
            last_reset = nxt
            if motion_start and policy.send_on_motion_start:
                sends.append(Transmission(nxt, SendReason.MOTION_START))
            continue
        if due > horizon_us:
            return sends
        sends.append(Transmission(due, SendReason.CADENCE))
        last_reset = due


def messages_per_day(policy: MessagingPolicy,
                     day_trace: Sequence[tuple[int, MotionState]] = ()) -> float:
    """Messages for one representative day (trace times within [0, 24 h])."""
    if policy.kind is PolicyKind.FIXED_DAILY:
        return float(policy.messages_per_day)
    return float(len(next_transmissions(policy, day_trace, US_PER_DAY)))


def estimate_lifetime(policy: MessagingPolicy, energy: EnergyModel,
                      avg_motion_profile: Sequence[tuple[int, MotionState]] = ()) -> int:
    """Whole days until the battery budget is spent."""
    drain = energy.idle_cost_per_day + messages_per_day(policy, avg_motion_profile) * energy.per_message_cost
    if drain == 0:
        raise ZeroDrain("no idle or message cost")
    return math.floor(energy.battery_budget / drain)


def lifetime_years(days: int) -> float:
    return days / DAYS_PER_YEAR


def payload_check(policy: MessagingPolicy, message_bytes: int) -> PayloadCheck:
    return PayloadCheck.OK if message_bytes <= policy.max_payload_bytes else PayloadCheck.TOO_LARGE


def schedule_csv(rows: Iterable[tuple[str, Transmission]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["device_id", "send_time_us", "reason"])
    for device_id, tx in rows:
        w.writerow([device_id, tx.time_us, tx.reason.value])
    return buf.getvalue()
