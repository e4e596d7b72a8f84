"""Profile gridding, vertical averaging and TC / non-TC partitioning."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import PchipInterpolator

from .errors import InsufficientCoverage
from .geodesy import GeoPoint, lon_difference

log = logging.getLogger(__name__)

PRESSURE_GRID = np.arange(10.0, 201.0, 10.0)
LEVEL_NAMES = tuple(str(int(z)) for z in PRESSURE_GRID) + ("AVG",)
N_LEVELS = len(LEVEL_NAMES)
AVG_SAMPLES = 5000


def level_index(name) -> int:
    name = str(name).upper()
    if name not in LEVEL_NAMES:
        raise ValueError(f"unknown level {name!r}; expected one of {LEVEL_NAMES}")
    return LEVEL_NAMES.index(name)


@dataclass
class RawProfile:
    float_id: str
    cycle: int
    loc: GeoPoint
    time: float
    pressure: np.ndarray
    temperature: np.ndarray

    def __post_init__(self):
        self.pressure = np.asarray(self.pressure, dtype=float)
        self.temperature = np.asarray(self.temperature, dtype=float)
        if self.pressure.shape != self.temperature.shape or self.pressure.size < 2:
            raise ValueError(f"profile {self.float_id}/{self.cycle}: need >=2 paired samples")
        if np.any(np.diff(self.pressure) <= 0):
            raise ValueError(f"profile {self.float_id}/{self.cycle}: pressures not strictly increasing")


@dataclass
class GriddedProfile:
    float_id: str
    cycle: int
    loc: GeoPoint
    time: float
    temps: np.ndarray
    vert_avg: float
    is_tc: bool = False

    @property
    def values(self) -> np.ndarray:
        """All 21 analysis values: the 20 gridded levels then the average."""
        return np.append(self.temps, self.vert_avg)


def pchip_interpolate(p: RawProfile, lo: float = 10.0, hi: float = 200.0) -> PchipInterpolator:
    if p.pressure[0] > lo or p.pressure[-1] < hi:
        raise InsufficientCoverage(
            f"profile {p.float_id}/{p.cycle} spans [{p.pressure[0]}, {p.pressure[-1]}] dbar"
        )
    return PchipInterpolator(p.pressure, p.temperature, extrapolate=False)


def grid_profile(p: RawProfile) -> GriddedProfile:
    f = pchip_interpolate(p)
    temps = f(PRESSURE_GRID)
    # grid levels that coincide with a sample take the sample value exactly
    pos = np.searchsorted(p.pressure, PRESSURE_GRID).clip(max=len(p.pressure) - 1)
    hit = p.pressure[pos] == PRESSURE_GRID
    temps[hit] = p.temperature[pos[hit]]
    zz = np.linspace(PRESSURE_GRID[0], PRESSURE_GRID[-1], AVG_SAMPLES)
    vert_avg = trapezoid(f(zz), zz) / (PRESSURE_GRID[-1] - PRESSURE_GRID[0])
    if not (np.all(np.isfinite(temps)) and np.isfinite(vert_avg)):
        raise InsufficientCoverage(f"profile {p.float_id}/{p.cycle} produced non-finite values")
    return GriddedProfile(p.float_id, p.cycle, p.loc, p.time, temps, float(vert_avg))


@dataclass
class ProfileTable:
    """Column-oriented collection of gridded profiles.

    ``values`` has one row per profile and one column per analysis level
    (see ``LEVEL_NAMES``).
    """

    float_id: np.ndarray
    cycle: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    time: np.ndarray
    values: np.ndarray
    is_tc: np.ndarray = field(default=None)

    def __post_init__(self):
        self.float_id = np.asarray(self.float_id, dtype=object)
        self.cycle = np.asarray(self.cycle, dtype=int)
        self.lon = np.asarray(self.lon, dtype=float)
        self.lat = np.asarray(self.lat, dtype=float)
        self.time = np.asarray(self.time, dtype=float)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.time), N_LEVELS)
        if self.is_tc is None:
            self.is_tc = np.zeros(len(self.time), dtype=bool)
        self.is_tc = np.asarray(self.is_tc, dtype=bool)

    def __len__(self):
        return len(self.time)

    @classmethod
    def from_gridded(cls, profiles):
        profiles = list(profiles)
        return cls(
            float_id=[p.float_id for p in profiles],
            cycle=[p.cycle for p in profiles],
            lon=[p.loc.lon for p in profiles],
            lat=[p.loc.lat for p in profiles],
            time=[p.time for p in profiles],
            values=np.array([p.values for p in profiles]).reshape(len(profiles), N_LEVELS),
            is_tc=[p.is_tc for p in profiles],
        )

    def subset(self, idx) -> "ProfileTable":
        return ProfileTable(
            self.float_id[idx], self.cycle[idx], self.lon[idx], self.lat[idx],
            self.time[idx], self.values[idx], self.is_tc[idx],
        )

    def profile(self, i) -> GriddedProfile:
        return GriddedProfile(
            self.float_id[i], int(self.cycle[i]), GeoPoint(self.lon[i], self.lat[i]),
            float(self.time[i]), self.values[i, :-1].copy(), float(self.values[i, -1]),
            bool(self.is_tc[i]),
        )


def grid_profiles(raw_profiles) -> ProfileTable:
    """Grid every profile, dropping (and counting) those without coverage.

    Duplicate ``(float_id, cycle)`` keys keep the last occurrence.
    """
    keyed = {}
    for p in raw_profiles:
        key = (p.float_id, p.cycle)
        if key in keyed:
            log.warning("duplicate profile %s/%s: keeping the last one", *key)
        keyed[key] = p
    gridded, dropped = [], 0
    for p in keyed.values():
        try:
            gridded.append(grid_profile(p))
        except InsufficientCoverage:
            dropped += 1
    if dropped:
        log.info("dropped %d profiles without [10, 200] dbar coverage", dropped)
    return ProfileTable.from_gridded(gridded)


def tc_profile_mask(lon, lat, time, tracks, deg=8.0, before=12.0, after=30.0) -> np.ndarray:
    """True where a profile lies near some track vertex in space and time.

    Tests ``|dlon| <= deg``, ``|dlat| <= deg`` and
    ``t_vertex - before <= t <= t_vertex + after`` against every vertex,
    boundaries inclusive.
    """
    lon, lat, time = (np.asarray(a, dtype=float) for a in (lon, lat, time))
    mask = np.zeros(len(time), dtype=bool)
    order = np.argsort(time, kind="stable")
    ts = time[order]
    for tr in tracks:
        lo = np.searchsorted(ts, tr.time.min() - before, side="left")
        hi = np.searchsorted(ts, tr.time.max() + after, side="right")
        idx = order[lo:hi]
        if idx.size == 0:
            continue
        dt = time[idx, None] - tr.time[None, :]
        near = (
            (np.abs(lon_difference(lon[idx, None], tr.lon[None, :])) <= deg)
            & (np.abs(lat[idx, None] - tr.lat[None, :]) <= deg)
            & (dt >= -before)
            & (dt <= after)
        )
        mask[idx] |= near.any(axis=1)
    return mask


def partition_profiles(profiles, tracks, deg=8.0, before=12.0, after=30.0):
    """Split profiles into (tc, non_tc).

    Accepts a ``ProfileTable`` (returns two tables and sets ``is_tc``) or a
    sequence of ``GriddedProfile`` (returns two lists).
    """
    if isinstance(profiles, ProfileTable):
        profiles.is_tc = tc_profile_mask(profiles.lon, profiles.lat, profiles.time, tracks, deg, before, after)
        return profiles.subset(profiles.is_tc), profiles.subset(~profiles.is_tc)
    profiles = list(profiles)
    mask = tc_profile_mask(
        [p.loc.lon for p in profiles], [p.loc.lat for p in profiles], [p.time for p in profiles],
        tracks, deg, before, after,
    )
    for p, m in zip(profiles, mask):
        p.is_tc = bool(m)
    return [p for p in profiles if p.is_tc], [p for p in profiles if not p.is_tc]
