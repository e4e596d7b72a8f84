"""Readers and writers for the on-disk formats."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd

from .geodesy import GeoPoint, Track, format_time, parse_time
from .profiles import RawProfile

TRACK_COLUMNS = ["storm_id", "basin", "timestamp_iso8601", "lon_deg", "lat_deg", "wind_kt"]
# floats are written with enough digits to round-trip exactly
FLOAT_FORMAT = "%.17g"


def read_tracks(path) -> list[Track]:
    df = read_csv(path, dtype={"storm_id": str, "basin": str})
    missing = set(TRACK_COLUMNS) - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing track columns {sorted(missing)}")
    tracks = []
    # groupby(sort=False) keeps storms in file order
    for sid, g in df.groupby("storm_id", sort=False):
        basins = g["basin"].unique()
        if len(basins) != 1:
            raise ValueError(f"storm {sid} has several basins {list(basins)}")
        times = np.array([parse_time(s) for s in g["timestamp_iso8601"]])
        tracks.append(Track(str(sid), str(basins[0]), g["lon_deg"].to_numpy(float), g["lat_deg"].to_numpy(float),
                            times, g["wind_kt"].to_numpy(float)))
    return tracks


def write_tracks(tracks, path):
    rows = []
    for tr in tracks:
        for lon, lat, t, w in zip(tr.lon, tr.lat, tr.time, tr.wind):
            rows.append((tr.id, tr.basin, format_time(t), lon, lat, w))
    pd.DataFrame(rows, columns=TRACK_COLUMNS).to_csv(path, index=False, float_format=FLOAT_FORMAT)


def read_profiles(path) -> list[RawProfile]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(RawProfile(str(r["float_id"]), int(r["cycle"]), GeoPoint(r["lon"], r["lat"]),
                                      parse_time(r["time"]), r["pressure"], r["temperature"]))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{n}: bad profile record ({exc})") from exc
    return out


def profile_record(float_id, cycle, lon, lat, time, pressure, temperature) -> str:
    return json.dumps({"float_id": str(float_id), "cycle": int(cycle), "lon": float(lon), "lat": float(lat),
                       "time": format_time(time), "pressure": [float(v) for v in pressure],
                       "temperature": [float(v) for v in temperature]})


def write_profiles(profiles, path):
    with open(path, "w") as fh:
        for p in profiles:
            fh.write(profile_record(p.float_id, p.cycle, p.loc.lon, p.loc.lat, p.time, p.pressure,
                                    p.temperature) + "\n")


def write_csv(df: pd.DataFrame, path):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_csv(path, **kw) -> pd.DataFrame:
    """CSV reader with exact float parsing; a ``level`` column is always text (it mixes 10 and AVG)."""
    kw.setdefault("float_precision", "round_trip")
    kw["dtype"] = {"level": str, **(kw.get("dtype") or {})}
    return pd.read_csv(path, **kw)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
