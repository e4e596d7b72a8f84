"""Baseline / signal pairing around storm tracks and lineage construction.

Profiles are referenced by row index into a ``ProfileTable``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .geodesy import GeoPoint, Track, angle_deg, lon_difference, project_points, time_since_passage
from .profiles import LEVEL_NAMES, GriddedProfile, ProfileTable

BASELINE_WINDOW = (-12.0, -2.0)  # half-open [lo, hi)
SIGNAL_WINDOW = (-2.0, 20.0)  # closed


@dataclass
class Candidates:
    """Profiles near one track: row indices plus their own projection coordinates."""

    index: np.ndarray
    d: np.ndarray
    tau: np.ndarray

    def __len__(self):
        return len(self.index)


@dataclass(frozen=True)
class ProfilePair:
    baseline: GriddedProfile
    signal: GriddedProfile
    track_id: str
    d: float
    tau: float
    wind_at_proj: float
    loc: GeoPoint


@dataclass
class Lineage:
    """A baseline profile and its time-ordered signal profiles for one track.

    All signals share the baseline location, so ``d``, ``t_proj`` and
    ``wind`` are scalars; ``tau`` has one entry per signal.
    """

    track_id: str
    basin: str
    baseline: int
    signals: np.ndarray
    d: float = np.nan
    t_proj: float = np.nan
    wind: float = np.nan
    tau: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.signals)

    def pairs(self, profiles: ProfileTable) -> list[ProfilePair]:
        b = profiles.profile(self.baseline)
        return [
            ProfilePair(b, profiles.profile(s), self.track_id, self.d, float(t), self.wind, b.loc)
            for s, t in zip(self.signals, self.tau)
        ]


def find_incidental(track: Track, profiles: ProfileTable, deg=8.0,
                    baseline_window=BASELINE_WINDOW, signal_window=SIGNAL_WINDOW):
    """Split profiles near ``track`` into baseline and signal candidates.

    Each profile is placed by its own nearest point on the track: it must
    lie within ``deg`` in both longitude and latitude of that point, and its
    time since passage selects the window.
    """
    lo = track.time.min() + baseline_window[0] - 1.0
    hi = track.time.max() + signal_window[1] + 1.0
    rows = np.flatnonzero((profiles.time >= lo) & (profiles.time <= hi))
    empty = Candidates(np.array([], int), np.array([]), np.array([]))
    if rows.size == 0:
        return empty, empty
    pr = project_points(profiles.lon[rows], profiles.lat[rows], track)
    tau = np.atleast_1d(time_since_passage(profiles.time[rows], pr["t_proj"]))
    near = (
        (np.abs(lon_difference(profiles.lon[rows], pr["proj_lon"])) <= deg)
        & (np.abs(profiles.lat[rows] - pr["proj_lat"]) <= deg)
    )
    is_base = near & (tau >= baseline_window[0]) & (tau < baseline_window[1])
    is_sig = near & (tau >= signal_window[0]) & (tau <= signal_window[1])

    def pick(m):
        return Candidates(rows[m], pr["d"][m], tau[m])

    return pick(is_base), pick(is_sig)


def assign_signals(base: Candidates, sig: Candidates, profiles: ProfileTable, radius=0.2) -> dict:
    """Map each signal row to at most one baseline row.

    A signal may join any earlier baseline within ``radius`` degrees; among
    several it goes to the most recent baseline, then the closest one, then
    the lowest row index. Returns ``{baseline_row: [signal_rows]}``.
    """
    out: dict[int, list[int]] = {}
    if len(base) == 0 or len(sig) == 0:
        return out
    b, s = base.index, sig.index
    ang = angle_deg(profiles.lon[b][None, :], profiles.lat[b][None, :],
                    profiles.lon[s][:, None], profiles.lat[s][:, None])
    ang = np.atleast_2d(ang)
    ok = (ang <= radius) & (profiles.time[b][None, :] < profiles.time[s][:, None]) & (b[None, :] != s[:, None])
    for i in np.flatnonzero(ok.any(axis=1)):
        j = np.flatnonzero(ok[i])
        key = np.lexsort((b[j], ang[i, j], -profiles.time[b[j]]))
        out.setdefault(int(b[j[key[0]]]), []).append(int(s[i]))
    return out


def sparsify(baseline_time: float, signal_times, min_sep=3.0, max_signals=6) -> np.ndarray:
    """Greedy chronological thinning; returns positions of kept signals.

    A signal is kept iff it is at least ``min_sep`` days from the baseline and
    from every signal kept so far, up to ``max_signals``.
    """
    signal_times = np.asarray(signal_times, dtype=float)
    kept_times = [baseline_time]
    kept = []
    for k in np.argsort(signal_times, kind="stable"):
        if len(kept) >= max_signals:
            break
        t = signal_times[k]
        if all(abs(t - u) >= min_sep for u in kept_times):
            kept.append(k)
            kept_times.append(t)
    return np.array(kept, dtype=int)


def build_lineages(base: Candidates, sig: Candidates, profiles: ProfileTable, track: Track,
                   radius=0.2, min_sep=3.0, max_signals=6) -> list[Lineage]:
    groups = assign_signals(base, sig, profiles, radius)
    out = []
    for b in sorted(groups, key=lambda r: (profiles.time[r], r)):
        s = np.array(sorted(groups[b], key=lambda r: (profiles.time[r], r)), dtype=int)
        keep = sparsify(profiles.time[b], profiles.time[s], min_sep, max_signals)
        if keep.size:
            out.append(Lineage(track.id, track.basin, int(b), s[keep]))
    return out


def attach_coordinates(lineage: Lineage, track: Track, profiles: ProfileTable,
                       baseline_window=BASELINE_WINDOW, signal_window=SIGNAL_WINDOW) -> Lineage:
    """Fill (d, tau, wind) from the projection of the baseline location.

    Signals whose tau falls outside the signal window are dropped; if the
    baseline itself falls outside its window the lineage comes back empty.
    """
    b = lineage.baseline
    pr = project_points([profiles.lon[b]], [profiles.lat[b]], track)
    t_proj = float(pr["t_proj"][0])
    tau = np.atleast_1d(time_since_passage(profiles.time[lineage.signals], t_proj))
    tau_b = time_since_passage(profiles.time[b], t_proj)
    ok = (tau >= signal_window[0]) & (tau <= signal_window[1])
    if not baseline_window[0] <= tau_b < baseline_window[1]:
        ok[:] = False
    return Lineage(lineage.track_id, lineage.basin, b, lineage.signals[ok],
                   d=float(pr["d"][0]), t_proj=t_proj, wind=float(pr["wind"][0]), tau=tau[ok])


def pair_track(track: Track, profiles: ProfileTable, radius=0.2, min_sep=3.0, max_signals=6,
               deg=8.0, baseline_window=BASELINE_WINDOW, signal_window=SIGNAL_WINDOW) -> list[Lineage]:
    base, sig = find_incidental(track, profiles, deg, baseline_window, signal_window)
    lineages = build_lineages(base, sig, profiles, track, radius, min_sep, max_signals)
    out = []
    for lin in lineages:
        lin = attach_coordinates(lin, track, profiles, baseline_window, signal_window)
        if len(lin):
            out.append(lin)
    return out


def pair_all(tracks, profiles: ProfileTable, **kw) -> list[Lineage]:
    out = []
    for tr in tracks:
        out.extend(pair_track(tr, profiles, **kw))
    return out


def pair_table(lineages, profiles: ProfileTable) -> pd.DataFrame:
    """One row per pair, lineages contiguous and signals in time order."""
    rows = []
    for k, lin in enumerate(lineages):
        b = lin.baseline
        for s, tau in zip(lin.signals, lin.tau):
            rows.append((
                lin.track_id, lin.basin, k,
                profiles.float_id[b], int(profiles.cycle[b]),
                profiles.float_id[s], int(profiles.cycle[s]),
                profiles.lon[b], profiles.lat[b], lin.d, float(tau), lin.wind,
                profiles.time[b], profiles.time[s],
            ))
    cols = ["track_id", "basin", "lineage", "float_id_baseline", "cycle_baseline",
            "float_id_signal", "cycle_signal", "lon", "lat", "d_deg", "tau_days", "wind_kt",
            "time_baseline", "time_signal"]
    return pd.DataFrame(rows, columns=cols)


def y_columns():
    return [f"y_{name}" for name in LEVEL_NAMES]
