import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from tcthermal.config import PipelineConfig, parse_value
from tcthermal.geodesy import GeoPoint, Track, parse_time
from tcthermal.io import read_csv, read_profiles, read_tracks, sha256, write_csv, write_profiles, write_tracks
from tcthermal.profiles import LEVEL_NAMES, RawProfile


# ------------------------------------------------------------------ config

def test_defaults():
    c = PipelineConfig()
    assert c.pair_radius_deg == 0.2
    assert (c.baseline_lo, c.baseline_hi, c.signal_lo, c.signal_hi) == (-12.0, -2.0, -2.0, 20.0)
    assert c.lineage_separation_days == 3.0 and c.max_signals == 6
    assert c.meanfield_half_width == 8.0 and c.meanfield_n_min == 50
    assert c.gp_half_width == 5.0 and c.months == (8, 9, 10)
    assert c.knot_spacing == 0.5 and c.lambda_tolerance == 1.01
    assert (c.lambda_lo, c.lambda_hi, c.lambda_n) == (1e-3, 500.0, 40)
    assert c.hurricane_threshold_kt == 64.0
    assert c.variance_floor == math.exp(-4.5)
    assert (c.grid_nd, c.grid_nt) == (400, 100)
    assert c.crosstrack_bands == ((-2.5, -1.5), (-0.5, 0.5), (1.5, 2.5))
    assert c.time_bins == ((0.0, 3.0), (3.0, 20.0))
    assert c.level_indices() == list(range(21))


def test_text_round_trip(tmp_path):
    c = PipelineConfig(alpha=0.1, levels="10 AVG", side_condition=False, time_bins=((0.0, 5.0),), seed=7)
    path = tmp_path / "cfg.txt"
    c.save(path)
    assert PipelineConfig.load(path) == c


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-6, 10.0), st.floats(1e-4, 1e-2), st.integers(1, 50))
def test_float_entries_round_trip_exactly(radius, lo, n):
    c = PipelineConfig(pair_radius_deg=radius, lambda_lo=lo, lambda_n=n)
    assert PipelineConfig.from_text(c.to_text()) == c


def test_comments_blank_lines_and_overrides():
    text = "# header\n\nalpha = 0.01  # stricter\nlevels = 10, 20\n"
    c = PipelineConfig.from_text(text, seed=3)
    assert c.alpha == 0.01 and c.seed == 3 and c.level_indices() == [0, 1]


@pytest.mark.parametrize("text", ["nonsense = 1", "alpha 0.1", "alpha = 2", "levels = 15",
                                  "baseline_hi = -1", "side_condition = maybe", "lambda_lo = 900"])
def test_invalid_text_rejected(text):
    with pytest.raises(ValueError):
        PipelineConfig.from_text(text)


def test_parse_value():
    assert parse_value("gp_cell_step", "5") == 5
    assert parse_value("crosstrack_bands", "-1:1") == ((-1.0, 1.0),)
    assert parse_value("side_condition", "no") is False
    with pytest.raises(ValueError):
        parse_value("bogus", "1")


def test_level_names_map_to_indices():
    c = PipelineConfig(levels="avg 200 10")
    assert c.level_indices() == [0, 19, 20]
    assert [LEVEL_NAMES[i] for i in c.level_indices()] == ["10", "200", "AVG"]


# ---------------------------------------------------------------------- io

def _track(tid="T1", basin="WP"):
    t0 = parse_time("2015-08-01T00:00:00")
    return Track(tid, basin, np.array([150.0, 149.5, 149.0]), np.array([15.0, 15.2, 15.5]),
                 t0 + np.array([0.0, 0.25, 0.5]), np.array([40.0, 70.0, 95.5]))


def test_tracks_round_trip(tmp_path):
    tracks = [_track(), _track("T2", "SH")]
    write_tracks(tracks, tmp_path / "t.csv")
    back = read_tracks(tmp_path / "t.csv")
    assert [t.id for t in back] == ["T1", "T2"] and back[1].basin == "SH"
    for a, b in zip(tracks, back):
        assert np.array_equal(a.lon, b.lon) and np.array_equal(a.lat, b.lat) and np.array_equal(a.wind, b.wind)
        assert np.allclose(a.time, b.time, atol=1e-6)


def test_tracks_missing_column(tmp_path):
    pd.DataFrame({"storm_id": ["a"], "basin": ["WP"]}).to_csv(tmp_path / "t.csv", index=False)
    with pytest.raises(ValueError, match="missing track columns"):
        read_tracks(tmp_path / "t.csv")


def test_tracks_inconsistent_basin(tmp_path):
    write_tracks([_track()], tmp_path / "t.csv")
    df = pd.read_csv(tmp_path / "t.csv")
    df.loc[1, "basin"] = "NA"
    df.to_csv(tmp_path / "t.csv", index=False)
    with pytest.raises(ValueError, match="several basins"):
        read_tracks(tmp_path / "t.csv")


def test_profiles_round_trip(tmp_path):
    t = parse_time("2015-09-01T12:30:00")
    p = RawProfile("F1", 4, GeoPoint(150.25, 12.5), t, np.array([5.0, 50.0, 210.0]),
                   np.array([29.123456789012345, 27.0, 18.5]))
    write_profiles([p], tmp_path / "p.jsonl")
    (back,) = read_profiles(tmp_path / "p.jsonl")
    assert back.float_id == "F1" and back.cycle == 4
    assert np.array_equal(back.temperature, p.temperature) and np.array_equal(back.pressure, p.pressure)
    assert abs(back.time - t) < 1e-6


def test_bad_profile_record_names_line(tmp_path):
    path = tmp_path / "p.jsonl"
    path.write_text(json.dumps({"float_id": "a"}) + "\n")
    with pytest.raises(ValueError, match=":1:"):
        read_profiles(path)


def test_empty_profile_file(tmp_path):
    (tmp_path / "p.jsonl").write_text("")
    assert read_profiles(tmp_path / "p.jsonl") == []


def test_csv_floats_round_trip_and_digest(tmp_path):
    x = np.random.default_rng(0).normal(size=50)
    write_csv(pd.DataFrame({"x": x}), tmp_path / "a.csv")
    write_csv(pd.DataFrame({"x": x}), tmp_path / "b.csv")
    assert np.array_equal(read_csv(tmp_path / "a.csv")["x"].to_numpy(), x)
    assert sha256(tmp_path / "a.csv") == sha256(tmp_path / "b.csv")
