import math
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iiotsim import _kernels
from iiotsim.model import (
    FRAME_LEN,
    BadCrc,
    BadSync,
    Command,
    CommandVerb,
    InvalidMeasurement,
    LatencyBudget,
    Measurement,
    OriginPattern,
    PlantProfile,
    ShortFrame,
    SizeClass,
    crc16_modbus,
    decode_fieldbus_frame,
    decode_measurement,
    encode_fieldbus_frame,
    encode_measurement,
    format_value,
    quantize_value,
    validate_plant_profile,
)
from oracles import crc16_bitwise

ids = st.text(st.characters(blacklist_characters="|\n\r", blacklist_categories=("Cs",)),
              min_size=1, max_size=12)
finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


# -- measurement line ----------------------------------------------------------------------

def test_zero_value_line():
    m = Measurement("t1", "d1", "s1", 0, 0.0, "degC")
    assert encode_measurement(m) == b"MEAS|t1|d1|s1|0|0.00000000|degC|native\n"


def test_standard_agent_line():
    m = Measurement("t1", "d1", "s1", 1000, 123.4, "bar", OriginPattern.STANDARD_AGENT)
    line = encode_measurement(m)
    assert b"|1000|123.400000|bar|STANDARD_AGENT" in line
    assert decode_measurement(line) == m


@pytest.mark.parametrize("value, text", [
    (1.0, "1.00000000"),
    (-2.5, "-2.50000000"),
    (123456789.0, "123456789"),
    (1e-7, "1.00000000e-07"),
    (1e15, "1.00000000e+15"),
    (0.000123, "0.000123000000"),
])
def test_value_rendering(value, text):
    assert format_value(value) == text


@given(ids, ids, ids, st.integers(0, 2**62), finite, st.text(
    st.characters(blacklist_characters="|\n\r", blacklist_categories=("Cs",)), min_size=1,
    max_size=16), st.sampled_from(list(OriginPattern)))
def test_measurement_round_trip(tenant, device, sensor, ts, value, unit, pattern):
    m = Measurement(tenant, device, sensor, ts, quantize_value(value), unit, pattern)
    assert decode_measurement(encode_measurement(m)) == m


@given(finite)
def test_quantize_is_idempotent(value):
    q = quantize_value(value)
    assert quantize_value(q) == q
    assert format_value(q) == format_value(value)


@pytest.mark.parametrize("kwargs", [
    dict(value=math.nan), dict(value=math.inf), dict(timestamp_us=-1), dict(tenant_id=""),
    dict(device_id="a|b"), dict(unit="u" * 17), dict(sensor_id="x\n"),
])
def test_invalid_measurements(kwargs):
    base = dict(tenant_id="t", device_id="d", sensor_id="s", timestamp_us=0, value=1.0, unit="u")
    base.update(kwargs)
    with pytest.raises(InvalidMeasurement):
        Measurement(**base)


def test_malformed_line():
    with pytest.raises(InvalidMeasurement):
        decode_measurement(b"MEAS|t|d|s|0|1.0|u\n")


def test_command_round_trip_and_deadline():
    c = Command("r01", CommandVerb.STOP, 10, {"rule": "x"}, 20)
    assert Command.decode(c.encode()) == c
    with pytest.raises(ValueError):
        Command("r01", CommandVerb.STOP, 10, deadline_us=10)


def test_latency_budget_bounds():
    LatencyBudget(4, 500, 200)
    LatencyBudget(20, 500, 200)
    for args in [(3.9, 500, 200), (21, 500, 200), (10, 200, 200), (10, 500, 0)]:
        with pytest.raises(ValueError):
            LatencyBudget(*args)


# -- fieldbus frame ------------------------------------------------------------------------

def test_crc_known_vector():
    assert crc16_bitwise(b"\x01\x02\x03") == 0x6161
    assert crc16_modbus(b"\x01\x02\x03") == 0x6161
    # standard check value for CRC-16/MODBUS
    assert crc16_modbus(b"123456789") == 0x4B37


@given(st.binary(max_size=64))
def test_crc_matches_bitwise_oracle(data):
    assert crc16_modbus(data) == crc16_bitwise(data)


def test_frame_layout():
    f = encode_fieldbus_frame(1, 0x0102, -2)
    assert len(f) == FRAME_LEN
    assert f[:8] == b"\xa5\x01\x01\x02" + struct.pack(">i", -2)
    assert struct.unpack("<H", f[8:])[0] == crc16_bitwise(f[:8])


def test_frame_zero_round_trip():
    fr = decode_fieldbus_frame(encode_fieldbus_frame(1, 0, 0))
    assert (fr.unit_id, fr.register, fr.raw_value) == (1, 0, 0)


@given(st.integers(0, 255), st.integers(0, 0xFFFF), st.integers(-(2**31), 2**31 - 1))
def test_frame_round_trip(unit, reg, raw):
    fr = decode_fieldbus_frame(encode_fieldbus_frame(unit, reg, raw))
    assert (fr.unit_id, fr.register, fr.raw_value) == (unit, reg, raw)


@pytest.mark.parametrize("unit, reg, raw", [(1, 0, 0), (247, 65535, -(2**31)), (17, 40001, 123456)])
def test_every_single_byte_corruption_is_detected(unit, reg, raw):
    good = encode_fieldbus_frame(unit, reg, raw)
    for pos in range(FRAME_LEN):
        for val in range(256):
            if val == good[pos]:
                continue
            bad = bytearray(good)
            bad[pos] = val
            with pytest.raises((BadCrc, BadSync)):
                decode_fieldbus_frame(bytes(bad))


def test_short_frame_checked_first():
    with pytest.raises(ShortFrame):
        decode_fieldbus_frame(b"\x00" * 9)
    with pytest.raises(BadSync):
        decode_fieldbus_frame(b"\x00" * 10)


def test_crc_paths_agree():
    rng = __import__("numpy").random.default_rng(3)
    rows = rng.integers(0, 256, size=(200, 8), dtype="uint8")
    expected = [crc16_bitwise(bytes(r)) for r in rows]
    assert list(_kernels.crc16_rows_numpy(rows)) == expected
    if _kernels.HAVE_NUMBA:
        assert list(_kernels.crc16_rows_numba(rows)) == expected
        assert _kernels.crc16_numba(b"\x01\x02\x03") == 0x6161


# -- plant bands ---------------------------------------------------------------------------

def test_medium_profile_ok():
    assert validate_plant_profile(PlantProfile(SizeClass.MEDIUM, 60_000, 3_000, 75, 250)) == []


def test_small_band_is_strict():
    assert validate_plant_profile(PlantProfile(SizeClass.SMALL, 50_000, 10, 1, 1)) == ["sensor_count"]
    assert validate_plant_profile(PlantProfile(SizeClass.SMALL, 49_999, 1_999, 49, 199.9)) == []


def test_large_profile_ok():
    assert validate_plant_profile(PlantProfile(SizeClass.LARGE, 80_001, 4_001, 101, 301)) == []
    assert validate_plant_profile(PlantProfile(SizeClass.LARGE, 80_000, 4_000, 100, 300)) == [
        "sensor_count", "control_system_count", "gateway_count", "daily_data_gb"]


@pytest.mark.parametrize("n, ok", [(49_999, False), (50_000, True), (80_000, True), (80_001, False)])
def test_medium_sensor_edges(n, ok):
    p = PlantProfile(SizeClass.MEDIUM, n, 3_000, 75, 250)
    assert (validate_plant_profile(p) == []) is ok


@given(st.sampled_from(list(SizeClass)), st.integers(0, 200_000), st.integers(0, 10_000),
       st.integers(0, 500), st.floats(0, 1000))
def test_plant_validation_is_pure(size, sensors, ctrl, gws, gb):
    p = PlantProfile(size, sensors, ctrl, gws, gb)
    assert validate_plant_profile(p) == validate_plant_profile(p)
