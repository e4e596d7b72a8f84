"""Synthetic floats, storms and temperatures with a known planted response.

Temperature at pressure z for a profile at (lon, lat, t) is

    T = m(z, lat, lon, yearday) + sqrt(phi) f(lon, lat, t) + sigma eps_z + s*(d, tau, z)

where m is a smooth climatology with annual harmonics, f a unit-variance
field with exponential covariance in (lat / theta_lat, lon / theta_lon,
t / theta_t), independent across calendar years, eps_z iid N(0, 1) per
sample, and s* the planted response, added when the profile's own
(d, tau) relative to a storm lies in the analysis domain.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from .geodesy import Track, calendar_year, parse_time, project_points, time_since_passage, yearday
from .io import profile_record, write_csv, write_json, write_tracks
from .profiles import AVG_SAMPLES, LEVEL_NAMES, PRESSURE_GRID
from .tps import D_RANGE, GRID_SHAPE, TAU_RANGE, prediction_grid

SAMPLE_PRESSURES = np.concatenate([[5.0], PRESSURE_GRID, [210.0]])
MINUTE = 1.0 / 1440.0


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    # floats
    n_floats: int = 200
    year: int = 2012  # first year; floats sample n_years calendar years
    n_years: int = 4
    lon_range: tuple = (138.0, 168.0)
    lat_range: tuple = (8.0, 30.0)
    cadence_days: float = 3.0
    drift_deg: float = 0.03  # random-walk step sd per cycle and axis
    # storms
    n_tracks: int = 8  # assigned to years in turn
    sh_tracks: int = 0
    first_track_day: float = 190.0
    track_spacing_days: float = 60.0  # between storms of the same year
    track_jitter_days: float = 30.0  # start days are uniform over this span
    track_days: float = 8.0
    track_speed_deg: float = 2.0
    vertex_hours: float = 6.0
    peak_wind_kt: float = 120.0
    # variability
    phi: float = 0.25
    theta_lat: float = 0.3
    theta_lon: float = 0.3
    theta_t: float = 15.0
    sigma: float = 0.3
    n_features: int = 1500
    # climatology
    surface_temp: float = 29.0
    deep_temp: float = 17.0
    thermocline_scale: float = 120.0
    lat_gradient: float = -0.25
    lon_gradient: float = 0.02
    quad_coef: float = 0.004
    seasonal_amp: float = 3.0
    seasonal_decay: float = 80.0
    seasonal_peak_day: float = 230.0
    # planted response
    cold_amp: float = -1.5
    cold_d: float = 0.5
    cold_tau: float = 2.0
    cold_width_d: float = 1.5
    cold_floor_z: float = 150.0
    warm_amp: float = 0.5
    warm_d: float = 3.0
    warm_tau: float = 4.0
    warm_width_d: float = 1.2
    warm_z: float = 60.0
    warm_width_z: float = 25.0

    def __post_init__(self):
        for name in ("cadence_days", "n_years", "theta_lat", "theta_lon", "theta_t", "cold_width_d", "warm_width_d",
                     "warm_width_z", "cold_tau", "warm_tau", "thermocline_scale", "seasonal_decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.phi < 0 or self.sigma < 0 or self.drift_deg < 0:
            raise ValueError("phi, sigma and drift_deg must be non-negative")

    def replace(self, **kw) -> "SynthSpec":
        return dataclasses.replace(self, **kw)

    # ------------------------------------------------------------ truth

    def depth_cold(self, z):
        z = np.asarray(z, dtype=float)
        x = np.clip((z - 10.0) / (self.cold_floor_z - 10.0), 0.0, 1.0)
        return np.cos(0.5 * np.pi * x) ** 2

    def depth_warm(self, z):
        return np.exp(-0.5 * ((np.asarray(z, dtype=float) - self.warm_z) / self.warm_width_z) ** 2)

    @staticmethod
    def _time_shape(tau, peak):
        """Zero before passage, rising to 1 at ``peak`` days, then decaying."""
        x = np.clip(np.asarray(tau, dtype=float), 0.0, None) / peak
        return x * np.exp(1.0 - x)

    def signal(self, d, tau, z):
        """Planted response s*(d, tau, z); arrays broadcast together."""
        d, tau, z = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (d, tau, z)))
        cold = self.cold_amp * np.exp(-0.5 * ((d - self.cold_d) / self.cold_width_d) ** 2) \
            * self._time_shape(tau, self.cold_tau) * self.depth_cold(z)
        warm = self.warm_amp * np.exp(-0.5 * ((d - self.warm_d) / self.warm_width_d) ** 2) \
            * self._time_shape(tau, self.warm_tau) * self.depth_warm(z)
        return cold + warm

    def signal_avg(self, d, tau):
        """Vertical average of s* over [10, 200] dbar."""
        zz = np.linspace(PRESSURE_GRID[0], PRESSURE_GRID[-1], AVG_SAMPLES)
        d, tau = np.broadcast_arrays(np.asarray(d, dtype=float), np.asarray(tau, dtype=float))
        cold = self.cold_amp * np.exp(-0.5 * ((d - self.cold_d) / self.cold_width_d) ** 2) \
            * self._time_shape(tau, self.cold_tau)
        warm = self.warm_amp * np.exp(-0.5 * ((d - self.warm_d) / self.warm_width_d) ** 2) \
            * self._time_shape(tau, self.warm_tau)
        span = zz[-1] - zz[0]
        return cold * trapezoid(self.depth_cold(zz), zz) / span + warm * trapezoid(self.depth_warm(zz), zz) / span

    def level_signal(self, level: int, d, tau):
        if LEVEL_NAMES[level] == "AVG":
            return self.signal_avg(d, tau)
        return self.signal(d, tau, PRESSURE_GRID[level])

    def climatology(self, z, lat, lon, yd):
        z, lat, lon, yd = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (z, lat, lon, yd)))
        base = self.deep_temp + (self.surface_temp - self.deep_temp) * np.exp(-(z - 5.0) / self.thermocline_scale)
        dlat, dlon = lat - 20.0, lon - 150.0
        spatial = self.lat_gradient * dlat + self.lon_gradient * dlon + self.quad_coef * (dlat**2 - dlon * dlat)
        season = self.seasonal_amp * np.exp(-z / self.seasonal_decay) \
            * np.cos(2.0 * np.pi * (yd - self.seasonal_peak_day) / 365.25)
        return base + spatial + season

    def truth_frame(self, shape=GRID_SHAPE) -> pd.DataFrame:
        d, tau, pts = prediction_grid(shape)
        frames = []
        for k, name in enumerate(LEVEL_NAMES):
            frames.append(pd.DataFrame({"level": name, "d": pts[:, 0], "tau": pts[:, 1],
                                        "truth": self.level_signal(k, pts[:, 0], pts[:, 1])}))
        return pd.concat(frames, ignore_index=True)


# ---------------------------------------------------------------- sampling

def exponential_field(spec: SynthSpec, lon, lat, t, rng) -> np.ndarray:
    """Unit-variance draw with covariance exp(-||scaled lag||), independent per calendar year.

    Random Fourier features: the spectral measure of exp(-||u||) in three
    dimensions is multivariate Cauchy, sampled as z / |g| with z ~ N(0, I)
    and g ~ N(0, 1).
    """
    u = np.column_stack([np.asarray(lat) / spec.theta_lat, np.asarray(lon) / spec.theta_lon,
                         np.asarray(t) / spec.theta_t])
    years = calendar_year(t)
    out = np.empty(len(u))
    D = spec.n_features
    for yr in np.unique(years):
        idx = np.flatnonzero(years == yr)
        omega = rng.normal(size=(3, D)) / np.abs(rng.normal(size=D))
        phase = rng.uniform(0.0, 2.0 * np.pi, D)
        w = rng.normal(size=D)
        for s in range(0, len(idx), 4000):
            part = idx[s:s + 4000]
            out[part] = np.cos(u[part] @ omega + phase) @ w * np.sqrt(2.0 / D)
    return out


def _track(spec: SynthSpec, k: int, rng, south: bool) -> Track:
    year = spec.year + k % spec.n_years
    start = parse_time(f"{year}-01-01T00:00:00") + spec.first_track_day \
        + (k // spec.n_years) * spec.track_spacing_days + rng.uniform(0.0, spec.track_jitter_days)
    n = int(round(spec.track_days * 24.0 / spec.vertex_hours)) + 1
    # whole minutes, so the timestamps survive the ISO text round trip
    times = np.round((start + np.arange(n) * spec.vertex_hours / 24.0) / MINUTE) * MINUTE
    lon0 = rng.uniform(spec.lon_range[1] - 8.0, spec.lon_range[1] - 4.0)
    lat0 = rng.uniform(spec.lat_range[0] + 6.0, spec.lat_range[0] + 12.0)
    heading = np.radians(rng.uniform(150.0, 170.0))  # towards the west-north-west
    step = spec.track_speed_deg * spec.vertex_hours / 24.0
    turn = np.cumsum(rng.normal(0.0, np.radians(3.0), n))
    lon = lon0 + step * np.concatenate([[0.0], np.cumsum(np.cos(heading + turn[1:]))])
    lat = lat0 + step * np.concatenate([[0.0], np.cumsum(np.sin(heading + turn[1:]))])
    x = np.linspace(0.0, 1.0, n)
    # ramps up over the first fifth, holds, and weakens over the last fifth
    ramp = np.clip(np.minimum(x, 1.0 - x) / 0.2, 0.0, 1.0)
    wind = np.round(35.0 + (spec.peak_wind_kt - 35.0) * ramp, 1)
    if south:
        lat = -lat
    return Track(f"S{k:02d}", "SH" if south else "WP", lon, lat, times, wind)


@dataclass
class SynthData:
    spec: SynthSpec
    tracks: list
    float_id: np.ndarray
    cycle: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    time: np.ndarray
    temperature: np.ndarray  # profiles x SAMPLE_PRESSURES
    signal: np.ndarray  # planted part of ``temperature``


def simulate(spec: SynthSpec) -> SynthData:
    ss = np.random.SeedSequence(spec.seed)
    rng_tracks, rng_floats, rng_field, rng_noise = (np.random.default_rng(s) for s in ss.spawn(4))
    tracks = [_track(spec, k, rng_tracks, south=k < spec.sh_tracks) for k in range(spec.n_tracks)]

    t0 = parse_time(f"{spec.year}-01-01T00:00:00")
    n_cycles = int(np.floor(365.0 * spec.n_years / spec.cadence_days))
    lon0 = rng_floats.uniform(*spec.lon_range, spec.n_floats)
    lat0 = rng_floats.uniform(*spec.lat_range, spec.n_floats)
    south = np.zeros(spec.n_floats, bool)
    if spec.sh_tracks:
        south[: spec.n_floats // 2] = True
    offset = rng_floats.uniform(0.0, spec.cadence_days, spec.n_floats)
    steps = rng_floats.normal(0.0, spec.drift_deg, (2, spec.n_floats, n_cycles))
    steps[:, :, 0] = 0.0
    lon = lon0[:, None] + np.cumsum(steps[0], axis=1)
    lat = lat0[:, None] + np.cumsum(steps[1], axis=1)
    lat[south] = -lat[south]
    time = t0 + offset[:, None] + spec.cadence_days * np.arange(n_cycles)[None, :]
    time = np.round(time / MINUTE) * MINUTE
    fid = np.repeat([f"F{i:04d}" for i in range(spec.n_floats)], n_cycles)
    cyc = np.tile(np.arange(1, n_cycles + 1), spec.n_floats)
    lon, lat, time = lon.ravel(), lat.ravel(), time.ravel()
    lon = ((lon + 180.0) % 360.0) - 180.0

    z = SAMPLE_PRESSURES[None, :]
    temp = spec.climatology(z, lat[:, None], lon[:, None], yearday(time)[:, None])
    if spec.phi > 0:
        temp = temp + np.sqrt(spec.phi) * exponential_field(spec, lon, lat, time, rng_field)[:, None]
    if spec.sigma > 0:
        temp = temp + spec.sigma * rng_noise.normal(size=temp.shape)

    planted = np.zeros_like(temp)
    for tr in tracks:
        near = (time >= tr.time[0] + TAU_RANGE[0] - 1.0) & (time <= tr.time[-1] + TAU_RANGE[1] + 1.0)
        idx = np.flatnonzero(near)
        if idx.size == 0:
            continue
        pr = project_points(lon[idx], lat[idx], tr)
        tau = np.atleast_1d(time_since_passage(time[idx], pr["t_proj"]))
        d = np.atleast_1d(pr["d"])
        # southern storms turn the other way, so the response is mirrored in d
        d_eff = -d if tr.basin == "SH" else d
        inside = (d >= D_RANGE[0]) & (d <= D_RANGE[1]) & (tau >= TAU_RANGE[0]) & (tau <= TAU_RANGE[1])
        rows = idx[inside]
        planted[rows] += spec.signal(d_eff[inside, None], tau[inside, None], z)
    return SynthData(spec, tracks, fid, cyc, lon, lat, time, temp + planted, planted)


def generate(spec: SynthSpec, out_dir) -> dict:
    """Write tracks.csv, profiles.jsonl, truth_grid.csv and synth_spec.json; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = simulate(spec)
    paths = {"tracks": out / "tracks.csv", "profiles": out / "profiles.jsonl",
             "truth": out / "truth_grid.csv", "spec": out / "synth_spec.json"}
    write_tracks(data.tracks, paths["tracks"])
    with open(paths["profiles"], "w") as fh:
        for i in range(len(data.time)):
            fh.write(profile_record(data.float_id[i], data.cycle[i], data.lon[i], data.lat[i], data.time[i],
                                    SAMPLE_PRESSURES, data.temperature[i]) + "\n")
    write_csv(spec.truth_frame(), paths["truth"])
    write_json({k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(spec).items()},
               paths["spec"])
    return paths
