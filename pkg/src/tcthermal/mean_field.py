"""Seasonal mean field by local harmonic regression on a 1-degree grid."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import IllConditioned, InsufficientData, NoValidCell
from .geodesy import angle_deg, lon_difference, yearday
from .profiles import LEVEL_NAMES, N_LEVELS, ProfileTable

log = logging.getLogger(__name__)

N_HARMONICS = 6
N_COEF = 6 + 2 * N_HARMONICS
YEAR = 365.25
SPATIAL = slice(1, 6)
COEF_NAMES = ["b0", "dlat", "dlon", "dlat2", "dlon2", "dlatdlon"] + [
    f"sin{k}" for k in range(1, N_HARMONICS + 1)] + [f"cos{k}" for k in range(1, N_HARMONICS + 1)]


def cell_center(i, j):
    return -179.5 + np.asarray(j), -89.5 + np.asarray(i)


def nearest_cell(lon, lat):
    """(lat_idx, lon_idx) of the grid cell containing each location."""
    i = np.clip(np.floor(np.asarray(lat, dtype=float) + 90.0), 0, 179).astype(int)
    j = (np.floor(np.asarray(lon, dtype=float) + 180.0).astype(int)) % 360
    return i, j


def harmonics(yd):
    """Columns sin(2 pi k t / 365.25), k=1..6, then the matching cosines."""
    w = 2.0 * np.pi * np.outer(np.atleast_1d(yd), np.arange(1, N_HARMONICS + 1)) / YEAR
    return np.hstack([np.sin(w), np.cos(w)])


def design_matrix(dlat, dlon, yd):
    dlat, dlon = np.atleast_1d(dlat), np.atleast_1d(dlon)
    spatial = np.column_stack([np.ones_like(dlat), dlat, dlon, dlat**2, dlon**2, dlat * dlon])
    return np.hstack([spatial, harmonics(yd)])


def window_mask(center_lon, center_lat, lon, lat, half_width):
    return (np.abs(lat - center_lat) <= half_width) & (np.abs(lon_difference(lon, center_lon)) <= half_width)


def fit_local_regression(center_lon, center_lat, lon, lat, yd, values, n_min=50, max_cond=1e12):
    """OLS fit of the 18-term local model to observations already in the window.

    ``values`` may be 1-D or have one column per level; returns coefficients
    with shape (18,) or (levels, 18) and the design condition number.
    """
    values = np.asarray(values, dtype=float)
    if len(values) < n_min:
        raise InsufficientData(f"{len(values)} observations < {n_min}")
    X = design_matrix(np.asarray(lat) - center_lat, lon_difference(lon, center_lon), yd)
    coef, _, rank, sv = np.linalg.lstsq(X, values, rcond=None)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else np.inf
    if rank < X.shape[1] or cond > max_cond:
        raise IllConditioned(f"design rank {rank}, condition {cond:.3g}")
    return coef.T, cond


def seasonal_value(coef, yd):
    """Model value at the grid point itself: intercept plus harmonics.

    Only the intercept and harmonic coefficients are read.
    """
    coef = np.asarray(coef)
    h = harmonics(yd)
    out = coef[..., 0] + np.sum(coef[..., 6:] * h, axis=-1)
    return float(out[0]) if np.ndim(yd) == 0 and coef.ndim == 1 else out


@dataclass
class MeanFieldModel:
    """Fitted cells, stored sparsely; coefficients have shape (cells, levels, 18)."""

    cells: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), int))
    coef: np.ndarray = field(default_factory=lambda: np.zeros((0, N_LEVELS, N_COEF)))
    n_obs: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    cond: np.ndarray = field(default_factory=lambda: np.zeros(0))
    valid: np.ndarray = field(default_factory=lambda: np.zeros((0, N_LEVELS), bool))

    def __post_init__(self):
        self._index = {(int(i), int(j)): k for k, (i, j) in enumerate(self.cells)}

    def __contains__(self, cell):
        return tuple(cell) in self._index

    def add(self, cell, coef, n_obs, cond, valid):
        self._index[tuple(cell)] = len(self.cells)
        self.cells = np.vstack([self.cells, np.asarray(cell, int)[None]])
        self.coef = np.concatenate([self.coef, np.asarray(coef, float)[None]])
        self.n_obs = np.append(self.n_obs, n_obs)
        self.cond = np.append(self.cond, cond)
        self.valid = np.vstack([self.valid, np.asarray(valid, bool)[None]])

    def is_valid(self, cell, level):
        k = self._index.get(tuple(cell))
        return k is not None and bool(self.valid[k, level])

    def coefficients(self, cell, level):
        k = self._index[tuple(cell)]
        if not self.valid[k, level]:
            raise NoValidCell(f"cell {cell} level {LEVEL_NAMES[level]} is invalid")
        return self.coef[k, level]

    def resolve(self, lon, lat, level, max_ring=10):
        """Nearest valid fitted cell, searching outward ring by ring.

        Within a ring the cell whose center is closest to the home cell's
        center wins, so the result depends only on the home cell.
        """
        i0, j0 = (int(v) for v in nearest_cell(lon, lat))
        hlon, hlat = cell_center(i0, j0)
        for ring in ring_cells(i0, j0, max_ring):
            ok = [c for c in ring if self.is_valid(c, level)]
            if ok:
                clon, clat = cell_center(*np.array(ok).T)
                return ok[int(np.argmin(angle_deg(hlon, hlat, clon, clat)))]
        raise NoValidCell(f"no valid cell within {max_ring} rings of ({lon}, {lat})")

    def to_frame(self) -> pd.DataFrame:
        k, L = len(self.cells), N_LEVELS
        df = pd.DataFrame(self.coef.reshape(k * L, N_COEF), columns=COEF_NAMES)
        df.insert(0, "level", np.tile(LEVEL_NAMES, k))
        df.insert(0, "lon_idx", np.repeat(self.cells[:, 1], L))
        df.insert(0, "lat_idx", np.repeat(self.cells[:, 0], L))
        df["n_obs"] = np.repeat(self.n_obs, L)
        df["cond"] = np.repeat(self.cond, L)
        df["valid"] = self.valid.reshape(-1)
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "MeanFieldModel":
        L = N_LEVELS
        if len(df) % L:
            raise ValueError("mean-field table is not a whole number of cells")
        k = len(df) // L
        cells = df[["lat_idx", "lon_idx"]].to_numpy()[::L].astype(int)
        return cls(
            cells=cells,
            coef=df[COEF_NAMES].to_numpy(float).reshape(k, L, N_COEF),
            n_obs=df["n_obs"].to_numpy()[::L].astype(int),
            cond=df["cond"].to_numpy(float)[::L],
            valid=df["valid"].to_numpy(bool).reshape(k, L),
        )


def ring_cells(i0, j0, max_ring):
    """Yield lists of cells at Chebyshev distance 0, 1, ... from (i0, j0)."""
    for r in range(max_ring + 1):
        ring = []
        for di in range(-r, r + 1):
            i = i0 + di
            if not 0 <= i < 180:
                continue
            for dj in range(-r, r + 1):
                if max(abs(di), abs(dj)) == r:
                    ring.append((i, (j0 + dj) % 360))
        yield ring


def fit_cell(cell, profiles: ProfileTable, yd=None, half_width=8.0, n_min=50):
    """Fit all levels at one grid cell; returns (coef, n_obs, cond, valid)."""
    clon, clat = (float(v) for v in cell_center(*cell))
    yd = yearday(profiles.time) if yd is None else yd
    m = window_mask(clon, clat, profiles.lon, profiles.lat, half_width)
    n = int(m.sum())
    coef = np.full((N_LEVELS, N_COEF), np.nan)
    try:
        coef, cond = fit_local_regression(clon, clat, profiles.lon[m], profiles.lat[m], yd[m],
                                          profiles.values[m], n_min=n_min)
        valid = np.all(np.isfinite(coef), axis=1)
    except (InsufficientData, IllConditioned) as exc:
        log.debug("cell %s invalid: %s", cell, exc)
        cond, valid = np.inf, np.zeros(N_LEVELS, bool)
    return coef, n, cond, valid


def fit_mean_field(lon, lat, non_tc: ProfileTable, half_width=8.0, n_min=50, max_ring=10,
                   model: MeanFieldModel | None = None) -> MeanFieldModel:
    """Fit the cells needed to adjust observations at the given locations.

    Each location's own cell is fitted; if it is invalid, neighbouring rings
    are fitted until one valid cell is found or ``max_ring`` is exhausted.
    """
    model = MeanFieldModel() if model is None else model
    yd = yearday(non_tc.time)
    i, j = nearest_cell(lon, lat)
    for cell in sorted(set(zip(np.atleast_1d(i).tolist(), np.atleast_1d(j).tolist()))):
        for ring in ring_cells(cell[0], cell[1], max_ring):
            for c in ring:
                if c not in model:
                    model.add(c, *fit_cell(c, non_tc, yd, half_width, n_min))
            if any(model.valid[model._index[c]].all() for c in ring):
                break
    return model


def seasonal_adjust(T, model: MeanFieldModel, lon, lat, t, level):
    """Temperature minus the mean field at the nearest valid grid point."""
    cell = model.resolve(lon, lat, level)
    return T - float(seasonal_value(model.coefficients(cell, level), yearday(t)))


def adjusted_difference(T_signal, T_baseline, t_signal, t_baseline, model: MeanFieldModel, lon, lat, level):
    """Seasonally adjusted pair difference, both members evaluated at the baseline's grid point."""
    cell = model.resolve(lon, lat, level)
    coef = model.coefficients(cell, level)
    seasonal = seasonal_value(coef, yearday(t_signal)) - seasonal_value(coef, yearday(t_baseline))
    return (T_signal - T_baseline) - seasonal


def model_value(coef, dlat, dlon, yd):
    """Full local model (spatial terms included) at offsets from the cell center."""
    return design_matrix(dlat, dlon, yd) @ np.asarray(coef)


def adjusted_differences(T_signal, T_baseline, t_signal, t_baseline, lon, lat, model: MeanFieldModel,
                         levels=None, max_ring=10):
    """Vectorized ``adjusted_difference`` over pairs.

    ``T_signal``/``T_baseline`` have shape (pairs, levels). Entries whose
    baseline location resolves to no valid cell come back NaN.
    """
    T_signal, T_baseline = np.atleast_2d(T_signal), np.atleast_2d(T_baseline)
    levels = range(N_LEVELS) if levels is None else levels
    out = np.full(T_signal.shape, np.nan)
    i, j = nearest_cell(lon, lat)
    home = np.stack([np.atleast_1d(i), np.atleast_1d(j)], axis=1)
    uniq, inv = np.unique(home, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    ys, yb = yearday(t_signal), yearday(t_baseline)
    for col, lev in enumerate(levels):
        coefs = np.full((len(uniq), N_COEF), np.nan)
        for u, (ci, cj) in enumerate(uniq):
            clon, clat = cell_center(ci, cj)
            try:
                coefs[u] = model.coefficients(model.resolve(clon, clat, lev, max_ring), lev)
            except NoValidCell:
                pass
        c = coefs[inv]
        seasonal = seasonal_value(c, ys) - seasonal_value(c, yb)
        out[:, col] = (T_signal[:, col] - T_baseline[:, col]) - seasonal
    return out
