import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcthermal.geodesy import GeoPoint, Track, great_circle_angle, project_onto_track
from tcthermal.pairing import (
    Candidates,
    Lineage,
    attach_coordinates,
    build_lineages,
    find_incidental,
    pair_all,
    pair_table,
    sparsify,
)
from tcthermal.profiles import ProfileTable


def table(rows):
    """rows of (lon, lat, time[, float_id])."""
    n = len(rows)
    return ProfileTable(
        float_id=[r[3] if len(r) > 3 else f"F{i}" for i, r in enumerate(rows)],
        cycle=np.arange(n), lon=[r[0] for r in rows], lat=[r[1] for r in rows],
        time=[r[2] for r in rows], values=np.zeros((n, 21)),
    )


def eq_track(t0=100.0):
    return Track("EQ", "NA", lon=[0.0, 10.0], lat=[0.0, 0.0], time=[t0, t0 + 1.0], wind=[80.0, 100.0])


def test_find_incidental_windows():
    track = eq_track()
    # each profile projects to (5, 0) at t_proj = 100.5
    prof = table([(5.0, 1.0, 95.5), (5.0, 1.0, 101.5), (5.0, 1.0, 125.5), (5.0, 9.0, 101.5), (5.0, 1.0, 98.5)])
    base, sig = find_incidental(track, prof)
    assert list(base.index) == [0]
    assert set(sig.index) == {1, 4}
    assert base.tau[0] == pytest.approx(-5.0)


def cands(prof, idx):
    idx = np.asarray(idx, int)
    return Candidates(idx, np.zeros(len(idx)), np.zeros(len(idx)))


def test_greedy_sparsification_example():
    prof = table([(5.0, 1.0, 0.0), (5.1, 1.0, 3.0), (5.0, 1.1, 5.0)])
    lins = build_lineages(cands(prof, [0]), cands(prof, [1, 2]), prof, eq_track())
    assert len(lins) == 1
    assert list(lins[0].signals) == [1]


def test_distance_gate():
    prof = table([(5.0, 1.0, 0.0), (5.3, 1.0, 3.0)])
    assert build_lineages(cands(prof, [0]), cands(prof, [1]), prof, eq_track()) == []


def test_cap_of_six():
    rows = [(5.0, 1.0, 0.0)] + [(5.0, 1.0, 3.0 * k) for k in range(1, 8)]
    prof = table(rows)
    lins = build_lineages(cands(prof, [0]), cands(prof, range(1, 8)), prof, eq_track())
    assert list(lins[0].signals) == [1, 2, 3, 4, 5, 6]


def test_sparsify_pairwise_and_idempotent():
    keep = sparsify(0.0, [1.0, 3.0, 4.0, 6.5, 7.0])
    assert list(keep) == [1, 3]
    times = np.array([1.0, 3.0, 4.0, 6.5, 7.0])[keep]
    assert list(sparsify(0.0, times)) == [0, 1]


def test_attach_coordinates_on_track():
    track = eq_track(t0=0.0)
    prof = table([(5.0, 0.0, -5.0), (5.0, 0.0, 2.5)])
    lin = attach_coordinates(Lineage("EQ", "NA", 0, np.array([1])), track, prof)
    assert lin.d == 0.0
    assert lin.tau[0] == pytest.approx(2.0)
    assert lin.wind == pytest.approx(90.0)


def test_attach_coordinates_composition():
    track = eq_track(t0=0.0)
    prof = table([(5.0, 2.0, -4.0), (5.0, 2.0, 1.5)])
    lin = attach_coordinates(Lineage("EQ", "NA", 0, np.array([1])), track, prof)
    assert abs(lin.d) == pytest.approx(great_circle_angle(GeoPoint(5, 2), GeoPoint(5, 0)), abs=1e-12)
    assert lin.tau[0] == pytest.approx(1.0)


def test_southern_hemisphere_stored_unflipped():
    track = Track("S", "SH", lon=[0.0, 10.0], lat=[-20.0, -20.0], time=[0.0, 1.0], wind=[70, 70])
    prof = table([(5.0, -22.0, -4.0), (5.0, -22.0, 2.0)])
    lin = attach_coordinates(Lineage("S", "SH", 0, np.array([1])), track, prof)
    # eastward storm, point to the south lies right of track
    assert lin.d > 0


# ------------------------------------------------------------ brute-force oracle

def oracle_pairs(tracks, prof, radius=0.2, min_sep=3.0, cap=6):
    """Independent loop implementation of the pairing rules."""
    out = set()
    n = len(prof)
    for tr in tracks:
        proj, base, sig = {}, [], []
        for i in range(n):
            pr = project_onto_track(GeoPoint(prof.lon[i], prof.lat[i]), tr, t_signal=prof.time[i])
            dlon = (prof.lon[i] - pr.proj.lon + 180.0) % 360.0 - 180.0
            if abs(dlon) > 8 or abs(prof.lat[i] - pr.proj.lat) > 8:
                continue
            proj[i] = pr
            if -12 <= pr.tau < -2:
                base.append(i)
            if -2 <= pr.tau <= 20:
                sig.append(i)
        owner = {}
        for s in sig:
            best = None
            for b in base:
                if b == s or prof.time[b] >= prof.time[s]:
                    continue
                a = great_circle_angle(GeoPoint(prof.lon[b], prof.lat[b]), GeoPoint(prof.lon[s], prof.lat[s]))
                if a > radius:
                    continue
                key = (-prof.time[b], a, b)
                if best is None or key < best[0]:
                    best = (key, b)
            if best is not None:
                owner.setdefault(best[1], []).append(s)
        for b, ss in owner.items():
            kept_t, kept = [prof.time[b]], []
            for s in sorted(ss, key=lambda r: (prof.time[r], r)):
                if len(kept) == cap:
                    break
                if min(abs(prof.time[s] - u) for u in kept_t) >= min_sep:
                    kept.append(s)
                    kept_t.append(prof.time[s])
            pb = project_onto_track(GeoPoint(prof.lon[b], prof.lat[b]), tr, t_signal=prof.time[b])
            if not -12 <= pb.tau < -2:
                continue
            for s in kept:
                ps = project_onto_track(GeoPoint(prof.lon[b], prof.lat[b]), tr, t_signal=prof.time[s])
                if -2 <= ps.tau <= 20:
                    out.add((tr.id, b, s))
    return out


def random_scene(seed, n_floats=25, cycles=12):
    rng = np.random.default_rng(seed)
    tracks = [
        Track("A", "NA", lon=[-60, -63, -66, -70], lat=[15, 17, 20, 24], time=[30.0, 31.0, 32.0, 33.0], wind=[70, 90, 110, 80]),
        Track("B", "NA", lon=[-68, -64, -60], lat=[18, 21, 25], time=[36.0, 37.5, 39.0], wind=[65, 75, 60]),
    ]
    rows = []
    for f in range(n_floats):
        lon, lat = rng.uniform(-75, -55), rng.uniform(10, 30)
        t = rng.uniform(0, 10)
        for _ in range(cycles):
            rows.append((lon, lat, t, f"F{f}"))
            lon += rng.normal(0, 0.04)
            lat += rng.normal(0, 0.04)
            t += rng.choice([1.0, 2.0, 5.0])
    return tracks, table(rows)


@pytest.mark.parametrize("seed", range(4))
def test_matches_brute_force_oracle(seed):
    tracks, prof = random_scene(seed)
    lins = pair_all(tracks, prof)
    got = {(l.track_id, l.baseline, int(s)) for l in lins for s in l.signals}
    assert got == oracle_pairs(tracks, prof)
    assert len(got) > 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_lineage_invariants(seed):
    tracks, prof = random_scene(seed, n_floats=15)
    lins = pair_all(tracks, prof)
    for lin in lins:
        assert 1 <= len(lin) <= 6
        times = np.concatenate([[prof.time[lin.baseline]], prof.time[lin.signals]])
        gaps = np.abs(times[:, None] - times[None, :])[np.triu_indices(len(times), 1)]
        assert np.all(gaps >= 3.0)
        assert np.all(np.diff(prof.time[lin.signals]) > 0)
        for s in lin.signals:
            assert great_circle_angle(GeoPoint(prof.lon[lin.baseline], prof.lat[lin.baseline]),
                                      GeoPoint(prof.lon[s], prof.lat[s])) <= 0.2
        assert np.all((lin.tau >= -2) & (lin.tau <= 20)) and math.isfinite(lin.d)


def test_pair_table_layout():
    tracks, prof = random_scene(1)
    lins = pair_all(tracks, prof)
    df = pair_table(lins, prof)
    assert len(df) == sum(len(l) for l in lins)
    assert (np.diff(df["lineage"].to_numpy()) >= 0).all()
    assert df["time_signal"].gt(df["time_baseline"]).all()
