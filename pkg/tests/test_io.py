import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cocrash import io
from cocrash.cojump import CoCrashEvent, build_frequency_table
from cocrash.errors import DataError, EmptyInputError, ParseError
from cocrash.jumps import JumpEvent
from cocrash.ranks import CorrelationCurve, SteadyState

META = {"config_hash": "abc123", "seed": 5}


def test_fmt():
    assert io.fmt(True) == "true" and io.fmt(np.bool_(False)) == "false"
    assert io.fmt(np.int64(7)) == "7"
    assert io.fmt(math.nan) == ""
    assert io.fmt(0.1) == "0.1"
    assert io.fmt(None) == ""
    assert math.isnan(io.parse_float(""))
    with pytest.raises(ValueError):
        io.parse_bool("yes")


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert io.parse_float(io.fmt(x)) == x


def test_meta_header_and_errors(tmp_path):
    path = io.write_csv(tmp_path / "a.csv", ("x", "y"), [(1, 2.5)], META)
    lines = path.read_text().splitlines()
    assert lines[:2] == ["# config_hash=abc123", "# seed=5"]
    meta, rows = io.read_csv(path, ("x", "y"))
    assert meta == {"config_hash": "abc123", "seed": "5"}
    assert rows == [{"x": "1", "y": "2.5"}]
    assert io.read_meta(path) == meta
    with pytest.raises(ParseError):
        io.read_csv(path, ("x", "z"))
    path.write_text("x,y\n1\n")
    with pytest.raises(ParseError, match=":2:"):
        io.read_csv(path)
    path.write_text("# seed=1\n")
    with pytest.raises(EmptyInputError):
        io.read_csv(path)


def test_jumps_round_trip(tmp_path):
    events = [JumpEvent("A", 24_730_000, -7.123456789012345, -1, -0.0123),
              JumpEvent("B", 24_730_001, 8.5, 1, 1e-17)]
    io.write_jumps(tmp_path / io.JUMPS, events, META)
    assert io.read_jumps(tmp_path / io.JUMPS) == events


def test_events_and_frequency_round_trip(tmp_path):
    events = [CoCrashEvent(24_730_000, frozenset("AB"), (("A", -1), ("B", -1))),
              CoCrashEvent(24_730_005, frozenset("C"), (("C", 1),)),
              CoCrashEvent(24_730_009, frozenset("ABC"), (("A", 1), ("B", -1), ("C", 1)))]
    io.write_cocrash(tmp_path / io.COCRASH_EVENTS, events, META)
    assert io.read_cocrash(tmp_path / io.COCRASH_EVENTS) == events
    table = build_frequency_table(events, "ABCD")
    io.write_frequency(tmp_path / io.CRASH_FREQUENCY, table, META)
    back = io.read_frequency(tmp_path / io.CRASH_FREQUENCY)
    assert back.asset_universe == table.asset_universe
    assert np.array_equal(back.counts, table.counts)
    assert np.array_equal(back.event_counts, table.event_counts)


def test_event_size_mismatch(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text("timestamp,size,members,directions\n2017-01-10T10:00,3,A;B,1;1\n")
    with pytest.raises(DataError):
        io.read_cocrash(path)


def test_curves_and_steady_state_round_trip(tmp_path):
    curves = [CorrelationCurve(1, np.array([1, 2, 3]), np.array([0.5, math.nan, -0.25])),
              CorrelationCurve(3, np.array([1]), np.array([1 / 3]))]
    io.write_curves(tmp_path / io.RANK_CURVES, curves, META)
    back = io.read_curves(tmp_path / io.RANK_CURVES)
    for a, b in zip(curves, back):
        assert a.base_size == b.base_size
        assert np.array_equal(a.taus, b.taus)
        assert np.array_equal(a.rhos, b.rhos, equal_nan=True)
    states = [SteadyState(1, 0.25, 19, False), SteadyState(2, math.nan, 0, True)]
    io.write_steady_state(tmp_path / io.STEADY_STATE, states, META)
    back = io.read_steady_state(tmp_path / io.STEADY_STATE)
    assert back[0] == states[0]
    assert math.isnan(back[1].mean_rho) and back[1].truncated


def test_ground_truth_round_trip(tmp_path):
    events = [CoCrashEvent(24_730_000, frozenset("AB"), (("A", -1), ("B", -1)))]
    io.write_ground_truth(tmp_path / io.GROUND_TRUTH, events, {24_730_000: "fragile"}, META)
    back, regimes = io.read_ground_truth(tmp_path / io.GROUND_TRUTH)
    assert back == events and regimes == {24_730_000: "fragile"}


def test_assets_round_trip(tmp_path):
    io.write_assets(tmp_path / io.ASSETS, ("A", "B"), [1.5e6, 0.1], [10, 3], META)
    syms, dtv = io.read_assets(tmp_path / io.ASSETS)
    assert syms == ("A", "B") and dtv.tolist() == [1.5e6, 0.1]
