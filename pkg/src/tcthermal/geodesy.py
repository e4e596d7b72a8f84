"""Coordinate geometry on the sphere and along storm tracks.

Times are fractional days since 1970-01-01T00:00Z throughout the package.
Longitudes are normalized to [-180, 180).
"""
from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTrack

BASINS = ("NA", "WP", "EP", "NI", "SH")

_EPOCH = np.datetime64("1970-01-01T00:00:00", "us")
_US_PER_DAY = 86_400_000_000


def normalize_lon(lon):
    """Map longitudes (scalar or array) into [-180, 180)."""
    out = (np.asarray(lon, dtype=float) + 180.0) % 360.0 - 180.0
    return float(out) if np.ndim(out) == 0 else out


def lon_difference(lon1, lon2):
    """Signed ``lon1 - lon2`` wrapped into [-180, 180)."""
    return normalize_lon(np.asarray(lon1, dtype=float) - np.asarray(lon2, dtype=float))


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        object.__setattr__(self, "lon", normalize_lon(float(self.lon)))
        object.__setattr__(self, "lat", float(self.lat))


# ---------------------------------------------------------------- time helpers

def parse_time(iso: str) -> float:
    """ISO-8601 timestamp -> fractional days since the epoch (UTC assumed)."""
    ts = _dt.datetime.fromisoformat(iso.replace("Z", "+00:00"))
    if ts.tzinfo is not None:
        ts = ts.astimezone(_dt.timezone.utc).replace(tzinfo=None)
    delta = ts - _dt.datetime(1970, 1, 1)
    return delta.days + (delta.seconds + delta.microseconds / 1e6) / 86400.0


def format_time(days: float) -> str:
    ts = _dt.datetime(1970, 1, 1) + _dt.timedelta(days=float(days))
    return ts.isoformat(timespec="seconds") + "Z"


def _as_datetime64(days):
    us = np.round(np.asarray(days, dtype=float) * _US_PER_DAY).astype("int64")
    return _EPOCH + us.astype("timedelta64[us]")


def calendar_year(days):
    years = _as_datetime64(days).astype("datetime64[Y]").astype(int) + 1970
    return int(years) if np.ndim(years) == 0 else years


def calendar_month(days):
    """Month number 1..12."""
    months = _as_datetime64(days).astype("datetime64[M]").astype(int) % 12 + 1
    return int(months) if np.ndim(months) == 0 else months


def days_in_year(year):
    year = np.asarray(year)
    leap = ((year % 4 == 0) & (year % 100 != 0)) | (year % 400 == 0)
    out = np.where(leap, 366, 365)
    return int(out) if out.ndim == 0 else out


def yearday(days):
    """Zero-based fractional day of year (Jan 1 00:00 -> 0.0)."""
    dt = _as_datetime64(days)
    start = dt.astype("datetime64[Y]").astype("datetime64[us]")
    out = (dt - start).astype("int64") / _US_PER_DAY
    return float(out) if np.ndim(out) == 0 else out


def year_aware_diff(t_signal: float, t_proj: float, prior_year_length: float) -> float:
    """Yearday difference ``t_signal - t_proj``, wrapping across one new year."""
    diff = t_signal - t_proj
    if diff < 0:
        diff += prior_year_length
    return diff


def time_since_passage(t_signal, t_proj):
    """Days from storm passage to a profile, computed from calendar yeardays.

    Within a calendar year this is the plain yearday difference; across a
    year boundary the length of the earlier year is added (or removed for
    profiles that precede a passage in the following year).
    """
    t_signal = np.asarray(t_signal, dtype=float)
    t_proj = np.asarray(t_proj, dtype=float)
    ys, yp = calendar_year(t_signal), calendar_year(t_proj)
    diff = yearday(t_signal) - yearday(t_proj)
    diff = diff + np.where(ys > yp, days_in_year(yp), 0) - np.where(ys < yp, days_in_year(ys), 0)
    return float(diff) if diff.ndim == 0 else diff


# ------------------------------------------------------------------- geometry

def angle_deg(lon1, lat1, lon2, lat2):
    """Central angle in degrees between points (haversine form, vectorized)."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dl = np.radians(lon_difference(lon2, lon1))
    h = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    out = np.degrees(2.0 * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0))))
    return float(out) if np.ndim(out) == 0 else out


def great_circle_angle(a: GeoPoint, b: GeoPoint) -> float:
    return angle_deg(a.lon, a.lat, b.lon, b.lat)


@dataclass
class Track:
    """A best-track polyline with per-vertex time (days) and wind (knots)."""

    id: str
    basin: str
    lon: np.ndarray
    lat: np.ndarray
    time: np.ndarray
    wind: np.ndarray
    _frame: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lon = normalize_lon(np.atleast_1d(np.asarray(self.lon, dtype=float)))
        self.lat = np.atleast_1d(np.asarray(self.lat, dtype=float))
        self.time = np.atleast_1d(np.asarray(self.time, dtype=float))
        self.wind = np.atleast_1d(np.asarray(self.wind, dtype=float))
        if self.basin not in BASINS:
            raise ValueError(f"unknown basin {self.basin!r}")
        if not (len(self.lon) == len(self.lat) == len(self.time) == len(self.wind)):
            raise ValueError("track arrays differ in length")
        if len(self.lon) < 2:
            raise ValueError(f"track {self.id} has fewer than 2 vertices")
        if np.any(np.diff(self.time) <= 0):
            raise ValueError(f"track {self.id} timestamps are not strictly increasing")
        if np.any(self.wind < 0):
            raise ValueError(f"track {self.id} has negative wind")
        # continuous longitudes so segments never jump across the dateline
        self._frame = np.degrees(np.unwrap(np.radians(self.lon)))
        self._frame -= 360.0 * np.round(self._frame.mean() / 360.0)

    @property
    def center_lon(self) -> float:
        return float(self._frame.mean())

    def localize(self, lon):
        """Express longitudes in the track's continuous frame."""
        c = self.center_lon
        return c + lon_difference(lon, c)

    def frame_lon(self) -> np.ndarray:
        return self._frame


@dataclass(frozen=True)
class TrackProjection:
    proj: GeoPoint
    t_proj: float
    d: float
    tau: float
    segment_index: int
    wind_at_proj: float


def project_points(lon, lat, track: Track):
    """Nearest-point projection of many points onto a track.

    Distances are Euclidean in (lon, lat) degrees within the track's
    longitude frame. Returns a dict of arrays: ``proj_lon``, ``proj_lat``,
    ``t_proj``, ``d`` (signed degrees, positive right of forward motion),
    ``segment``, ``wind``, and ``dist`` (Euclidean, degrees).
    """
    x = np.atleast_1d(track.localize(np.asarray(lon, dtype=float)))
    y = np.atleast_1d(np.asarray(lat, dtype=float))
    vx, vy = track.frame_lon(), track.lat
    if np.all(vx == vx[0]) and np.all(vy == vy[0]):
        raise DegenerateTrack(f"all vertices of track {track.id} coincide")

    ax, ay = vx[:-1], vy[:-1]
    sx, sy = vx[1:] - ax, vy[1:] - ay
    seg2 = sx * sx + sy * sy
    px = x[:, None] - ax[None, :]
    py = y[:, None] - ay[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(seg2 > 0, (px * sx + py * sy) / seg2, 0.0)
    u = np.clip(u, 0.0, 1.0)
    qx = ax + u * sx
    qy = ay + u * sy
    dist2 = (x[:, None] - qx) ** 2 + (y[:, None] - qy) ** 2
    tq = track.time[:-1] + u * np.diff(track.time)

    # ties on distance go to the earliest passage time
    best = dist2.min(axis=1, keepdims=True)
    tie = dist2 <= best * (1.0 + 1e-12) + 1e-24
    seg = np.argmin(np.where(tie, tq, np.inf), axis=1)

    rows = np.arange(len(x))
    uu = u[rows, seg]
    prx, pry = qx[rows, seg], qy[rows, seg]
    t_proj = tq[rows, seg]
    wind = track.wind[seg] + uu * (track.wind[seg + 1] - track.wind[seg])

    dirx, diry = sx[seg], sy[seg]
    cross = dirx * (y - pry) - diry * (x - prx)
    mag = angle_deg(x, y, prx, pry)
    d = np.where(cross < 0, mag, -mag)
    d = np.where(mag == 0, 0.0, d)
    return {
        "proj_lon": normalize_lon(prx),
        "proj_lat": pry,
        "t_proj": t_proj,
        "d": d,
        "segment": seg,
        "wind": wind,
        "dist": np.sqrt(dist2[rows, seg]),
        "dlon": x - prx,
        "dlat": y - pry,
    }


def project_onto_track(p: GeoPoint, track: Track, t_signal: float | None = None) -> TrackProjection:
    """Project one point onto a track; ``tau`` uses ``t_signal`` when given."""
    r = project_points([p.lon], [p.lat], track)
    t_proj = float(r["t_proj"][0])
    tau = time_since_passage(t_signal, t_proj) if t_signal is not None else float("nan")
    return TrackProjection(
        proj=GeoPoint(float(r["proj_lon"][0]), float(r["proj_lat"][0])),
        t_proj=t_proj,
        d=float(r["d"][0]),
        tau=tau,
        segment_index=int(r["segment"][0]),
        wind_at_proj=float(r["wind"][0]),
    )
