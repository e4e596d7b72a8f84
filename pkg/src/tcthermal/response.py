"""Thermal-response surfaces: hemisphere sign flip, significance masks and marginal views."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import norm

from .errors import EmptyBand
from .tps import GRID_SHAPE, TpsFit, predict, prediction_basis, prediction_grid, prediction_variance

SOUTHERN_BASINS = frozenset({"SH"})
CROSSTRACK_BANDS = ((-2.5, -1.5), (-0.5, 0.5), (1.5, 2.5))
TIME_BINS = ((0.0, 3.0), (3.0, 20.0))


def hemisphere_flip(pairs: pd.DataFrame, column="d_deg") -> pd.DataFrame:
    """Negate the cross-track coordinate of Southern-Hemisphere pairs."""
    out = pairs.copy()
    south = out["basin"].astype(str).isin(SOUTHERN_BASINS).to_numpy()
    out.loc[south, column] = -out.loc[south, column]
    return out


def critical_value(alpha=0.05) -> float:
    return float(norm.ppf(1.0 - alpha / 2.0))


def pointwise_mask(estimates, variances, alpha=0.05) -> np.ndarray:
    """True where |estimate| > z_{1-alpha/2} * sd."""
    est, var = np.asarray(estimates, dtype=float), np.asarray(variances, dtype=float)
    return np.abs(est) > critical_value(alpha) * np.sqrt(var)


@dataclass
class LevelSurface:
    """Estimate and pointwise variance on the (d, tau) grid for one depth level.

    ``estimate`` and ``variance`` are indexed [d, tau]. ``tps`` and
    ``coef_cov`` are needed only for band variances.
    """
    level: str
    d: np.ndarray
    tau: np.ndarray
    estimate: np.ndarray
    variance: np.ndarray
    tps: TpsFit | None = None
    coef_cov: np.ndarray | None = None
    lam: float = float("nan")

    def significant(self, alpha=0.05) -> np.ndarray:
        return pointwise_mask(self.estimate, self.variance, alpha)

    def to_frame(self, alpha=0.05) -> pd.DataFrame:
        dd, tt = np.meshgrid(self.d, self.tau, indexing="ij")
        return pd.DataFrame({"d": dd.ravel(), "tau": tt.ravel(), "estimate": self.estimate.ravel(),
                             "variance": self.variance.ravel(),
                             "significant": self.significant(alpha).ravel().astype(int)})

    @classmethod
    def from_frame(cls, level, df: pd.DataFrame) -> "LevelSurface":
        d, tau = np.unique(df["d"].to_numpy()), np.unique(df["tau"].to_numpy())
        order = np.lexsort((df["tau"].to_numpy(), df["d"].to_numpy()))
        shape = (len(d), len(tau))
        est = df["estimate"].to_numpy()[order].reshape(shape)
        var = df["variance"].to_numpy()[order].reshape(shape)
        return cls(level, d, tau, est, var)


def surface_from_fit(level, tps: TpsFit, coef_cov, shape=GRID_SHAPE) -> LevelSurface:
    """Evaluate estimate and variance of a fit on the prediction grid."""
    d, tau, pts = prediction_grid(shape)
    est = predict(tps, pts)
    var = prediction_variance(tps, None, pts, coef_cov=coef_cov)
    return LevelSurface(level, d, tau, est.reshape(len(d), len(tau)), var.reshape(len(d), len(tau)),
                        tps, coef_cov, tps.lam)


@dataclass
class Marginal:
    """Band- or bin-averaged response; rows are levels, columns run along ``axis``."""
    kind: str
    interval: tuple
    levels: list
    axis: np.ndarray
    estimate: np.ndarray
    variance: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        name = "tau" if self.kind == "crosstrack" else "d"
        rows = []
        for i, lev in enumerate(self.levels):
            rows.append(pd.DataFrame({"level": lev, "lo": self.interval[0], "hi": self.interval[1],
                                      name: self.axis, "estimate": self.estimate[i], "variance": self.variance[i]}))
        return pd.concat(rows, ignore_index=True)


def _band_variances(surface: LevelSurface, sel, along_d: bool) -> np.ndarray:
    """Variance of each band mean from the coefficient covariance quadratic form."""
    if surface.tps is None or surface.coef_cov is None:
        raise ValueError(f"level {surface.level}: band variance needs the fit and its coefficient covariance")
    d_sel = surface.d[sel] if along_d else surface.d
    t_sel = surface.tau if along_d else surface.tau[sel]
    knots = surface.tps.knots
    if along_d:
        # one averaged basis row per tau column
        rows = [prediction_basis(np.column_stack([d_sel, np.full(len(d_sel), t)]), knots).mean(axis=0)
                for t in t_sel]
    else:
        rows = [prediction_basis(np.column_stack([np.full(len(t_sel), d), t_sel]), knots).mean(axis=0)
                for d in d_sel]
    A = np.asarray(rows)
    return np.maximum(np.einsum("ij,ij->i", A @ surface.coef_cov, A), 0.0)


def _marginal(surfaces, interval, along_d: bool, closed_hi: bool) -> Marginal:
    surfaces = list(surfaces)
    lo, hi = interval
    ref = surfaces[0]
    coord = ref.d if along_d else ref.tau
    sel = (coord >= lo) & ((coord <= hi) if closed_hi else (coord < hi))
    if not sel.any():
        raise EmptyBand(f"no grid {'columns' if along_d else 'rows'} in [{lo}, {hi}{']' if closed_hi else ')'}")
    axis = ref.tau if along_d else ref.d
    est, var = [], []
    for s in surfaces:
        block = s.estimate[sel, :] if along_d else s.estimate[:, sel]
        if sel.sum() == 1:
            # averaging a single grid line is the identity
            est.append(block.ravel().copy())
            var.append((s.variance[sel, :] if along_d else s.variance[:, sel]).ravel().copy())
        else:
            est.append(block.mean(axis=0 if along_d else 1))
            var.append(_band_variances(s, sel, along_d))
    return Marginal("crosstrack" if along_d else "time", (lo, hi), [s.level for s in surfaces], axis,
                    np.asarray(est), np.asarray(var))


def marginalize_crosstrack(surfaces, band=CROSSTRACK_BANDS[1]) -> Marginal:
    """Average over grid columns with d-center in the closed band; result is level x tau."""
    return _marginal(surfaces, band, along_d=True, closed_hi=True)


def marginalize_time(surfaces, bin=TIME_BINS[0]) -> Marginal:
    """Average over grid rows with tau-center in the half-open bin; result is level x d."""
    return _marginal(surfaces, bin, along_d=False, closed_hi=False)
