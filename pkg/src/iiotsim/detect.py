"""Window detectors shared by platform smart rules and edge analytics."""

from __future__ import annotations

import enum
import math
from collections.abc import Sequence

from iiotsim import _kernels


class Detector(str, enum.Enum):
    THRESHOLD = "THRESHOLD"
    MEAN_THRESHOLD = "MEAN_THRESHOLD"
    SLOPE = "SLOPE"


class Comparison(str, enum.Enum):
    ABOVE = ">"
    BELOW = "<"


def crosses(x: float, op: Comparison, bound: float) -> bool:
    # exact ties never fire
    if Comparison(op) is Comparison.ABOVE:
        return x > bound
    return x < bound


def window_mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values)


def window_slope(times_us: Sequence[int], values: Sequence[float]) -> float:
    """Least-squares slope of value over time, in units per second."""
    return _kernels.slope([t / 1e6 for t in times_us], values)


def statistic(detector: Detector, times_us: Sequence[int], values: Sequence[float]) -> float:
    if not values:
        raise ValueError("window must be non-empty")
    detector = Detector(detector)
    if detector is Detector.THRESHOLD:
        return float(values[-1])
    if detector is Detector.MEAN_THRESHOLD:
        return window_mean(values)
    return window_slope(times_us, values)


def fires(detector: Detector, op: Comparison, bound: float,
          times_us: Sequence[int], values: Sequence[float]) -> bool:
    return crosses(statistic(detector, times_us, values), op, bound)
