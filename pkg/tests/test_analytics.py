import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iiotsim.analytics import (
    SENSORS,
    FaultKind,
    FaultSpec,
    PaintStation,
    PaintStationConfig,
    TickMessage,
    WindowRule,
    controller_tick,
    process_window,
    run_paint_station,
    uplink_aggregates,
)
from iiotsim.detect import Comparison, Detector, window_slope
from iiotsim.netsim import EdgeTier
from oracles import ls_slope


def test_tick_carries_latest_reading_per_robot_and_sensor():
    st_ = PaintStation(8)
    msg = controller_tick(st_, 400_000)
    assert len(msg.readings) == 16
    assert {(r.robot_id, r.sensor_id) for r in msg.readings} == {
        (r.robot_id, s) for r in st_.robots for s in SENSORS}
    assert TickMessage.decode(msg.encode()) == msg


@pytest.mark.parametrize("n", [5, 13])
def test_robot_count_bounds(n):
    with pytest.raises(ValueError):
        PaintStation(n)


@pytest.mark.parametrize("duty", [4_000, 10_000, 20_000])
def test_downsampling_matches_full_rate_trace(duty):
    st_ = PaintStation(6, duty, seed=3)
    st_.robots[2].fault_injected_at_us = 700_123
    st_.robots[2].fault_kind = FaultKind.CLOG
    for k in range(1, 20):
        tick = k * 200_000
        msg = controller_tick(st_, tick)
        for idx, robot in enumerate(st_.robots):
            for s in SENSORS:
                last_t, last_v = st_.full_trace(idx, s, 0, tick)[-1]
                r = next(x for x in msg.readings if x.robot_id == robot.robot_id and x.sensor_id == s)
                assert (r.sample_us, r.value) == (last_t, last_v)


def _rule(det, op, bound, n=4):
    return WindowRule("r", "x", det, op, bound, n)


def test_constant_window_slope_is_zero():
    assert not process_window(_rule(Detector.SLOPE, Comparison.ABOVE, 0.0), [0, 1, 2], [5.0] * 3)
    assert not process_window(_rule(Detector.SLOPE, Comparison.BELOW, 0.0), [0, 1, 2], [5.0] * 3)


def test_unit_slope():
    ts = [0, 1_000_000, 2_000_000, 3_000_000]
    assert window_slope(ts, [1, 2, 3, 4]) == pytest.approx(1.0)
    assert ls_slope([0, 1, 2, 3], [1, 2, 3, 4]) == 1.0


def test_mean_tie_does_not_fire():
    assert not process_window(_rule(Detector.MEAN_THRESHOLD, Comparison.ABOVE, 5.0), [0, 1], [4.0, 6.0])
    assert process_window(_rule(Detector.MEAN_THRESHOLD, Comparison.ABOVE, 4.99), [0, 1], [4.0, 6.0])


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        process_window(_rule(Detector.THRESHOLD, Comparison.ABOVE, 0), [], [])


@given(st.lists(st.tuples(st.integers(0, 10**8), st.floats(-1e3, 1e3)), min_size=2, max_size=30,
                unique_by=lambda x: x[0]))
def test_slope_matches_closed_form(points):
    ts = [t for t, _ in points]
    vs = [v for _, v in points]
    got = window_slope(ts, vs)
    want = ls_slope([t / 1e6 for t in ts], vs)
    scale = max(1.0, max(abs(v) for v in vs)) / max(1e-6, (max(ts) - min(ts)) / 1e6)
    assert abs(got - want) <= 1e-6 * scale


# -- placement -----------------------------------------------------------------

def test_edge_placement_meets_every_deadline():
    res = run_paint_station(PaintStationConfig(placement=EdgeTier.FACTORY_EDGE, fault_count=40))
    assert len(res.records) == 40
    assert res.deadline_met_fraction == 1.0
    assert res.max_latency_us <= 200_000 + res.path_bound_us
    assert res.false_stops == 0


def test_cloud_placement_misses_every_deadline():
    res = run_paint_station(PaintStationConfig(placement=EdgeTier.CLOUD, fault_count=20))
    assert res.deadline_met_fraction == 0.0
    # 150 ms up + 100 ms ingest queue + 5 ms eval + 100 ms dispatch queue + 150 ms down
    assert res.min_latency_us > 505_000


def test_fault_one_microsecond_after_tick_waits_a_full_interval():
    cfg = PaintStationConfig(faults=[FaultSpec(0, 1_000_001, FaultKind.CLOG)])
    res = run_paint_station(cfg)
    (rec,) = res.records
    assert rec.latency_us >= 199_999 + 2_000 + 5_000 + 3_000
    assert rec.latency_us <= 199_999 + res.path_bound_us


def test_one_record_per_fault_even_when_missed():
    cfg = PaintStationConfig(faults=[FaultSpec(0, 1_000_001), FaultSpec(0, 1_100_000)])
    res = run_paint_station(cfg)
    assert [r.fault_id for r in res.records] == [0, 1]
    assert math.isinf(res.records[1].latency_us) and not res.records[1].deadline_met


def test_runs_are_deterministic():
    cfg = PaintStationConfig(fault_count=10, seed=9)
    a, b = run_paint_station(cfg), run_paint_station(cfg)
    assert a.trace_hash == b.trace_hash and a.records == b.records


# -- aggregation ---------------------------------------------------------------

def _readings(seconds, ticks_per_s=5):
    st_ = PaintStation(6, seed=2)
    out = []
    for k in range(seconds * ticks_per_s):
        tick = k * 200_000
        for r in controller_tick(st_, tick).readings:
            out.append((tick, r))
    return out


def test_sixty_second_period_counts_300_ticks():
    recs = uplink_aggregates(_readings(60), "t", "edge", 60_000_000)
    assert len(recs) == 12
    assert {r.count for r in recs} == {300}


def test_empty_period_emits_nothing():
    assert uplink_aggregates([], "t", "edge", 60_000_000) == []


def test_aggregate_mean_matches_raw():
    data = _readings(60)
    recs = uplink_aggregates(data, "t", "edge", 60_000_000)
    for rec in recs:
        robot, sensor = rec.sensor_id.split(".")
        raw = [r.value for _, r in data if r.robot_id == robot and r.sensor_id == sensor]
        want = math.fsum(raw) / len(raw)
        assert abs(rec.mean - want) <= 1e-9 * abs(want)
        assert rec.min == min(raw) and rec.max == max(raw)


@pytest.mark.parametrize("ticks", [2, 3, 10, 300])
def test_aggregation_saves_bytes(ticks):
    period = ticks * 200_000 + 1
    res = run_paint_station(PaintStationConfig(fault_count=0, aggregate_period_us=period,
                                               duration_us=period * 3))
    assert res.agg_bytes < res.raw_bytes


def test_aggregate_record_round_trip():
    (rec, *_) = uplink_aggregates(_readings(2), "t", "edge", 1_000_000)
    assert type(rec).decode(rec.encode()) == rec

