"""Locally stationary Gaussian-process variability model.

Per grid cell, an anisotropic exponential covariance with a nugget,

    k(a, b) = phi * exp(-sqrt((dlat/theta_lat)^2 + (dlon/theta_lon)^2 + (dt/theta_t)^2)),

is fitted by maximum likelihood to mean-adjusted non-TC values, with each
calendar year treated as an independent replicate. Colocated pair
differences then get a block-diagonal covariance with one block per lineage.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.linalg import block_diag, cho_factor, cho_solve
from scipy.optimize import minimize
from scipy.stats import chi2

from .errors import InsufficientData, NonPositiveDefinite, NoValidCell, OptimizerFailed
from .geodesy import angle_deg, calendar_month, calendar_year, lon_difference, yearday
from .mean_field import cell_center, model_value, nearest_cell, ring_cells
from .profiles import LEVEL_NAMES

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-6
PARAM_NAMES = ("phi", "theta_lat", "theta_lon", "theta_t", "sigma")
_PENALTY = 1e30
# bounds on (log phi, log theta_lat, log theta_lon, log theta_t, log sigma^2)
LOG_BOUNDS = [(-18.0, 8.0), (-7.0, 8.0), (-7.0, 8.0), (-7.0, 10.0), (np.log(SIGMA2_FLOOR), 8.0)]


@dataclass(frozen=True)
class GpParams:
    phi: float
    theta_lat: float
    theta_lon: float
    theta_t: float
    sigma: float
    n_obs: int = 0
    valid: bool = True

    def __post_init__(self):
        if self.valid:
            vals = (self.phi, self.theta_lat, self.theta_lon, self.theta_t)
            if not (all(np.isfinite(v) and v > 0 for v in vals) and np.isfinite(self.sigma) and self.sigma >= 0):
                raise ValueError(f"invalid GP parameters {self}")

    @property
    def sigma2(self):
        return self.sigma**2

    def log_vector(self):
        return np.log([self.phi, self.theta_lat, self.theta_lon, self.theta_t, max(self.sigma2, SIGMA2_FLOOR)])

    @classmethod
    def from_log_vector(cls, x, n_obs=0):
        phi, tlat, tlon, tt, s2 = np.exp(x)
        return cls(float(phi), float(tlat), float(tlon), float(tt), float(np.sqrt(s2)), n_obs)


@dataclass
class WindowData:
    """Observations for one GP fit; ``year`` groups the iid replicates."""

    lon: np.ndarray
    lat: np.ndarray
    t: np.ndarray
    y: np.ndarray
    year: np.ndarray

    def __post_init__(self):
        self.lon, self.lat, self.t, self.y = (np.asarray(a, dtype=float) for a in (self.lon, self.lat, self.t, self.y))
        self.year = np.asarray(self.year)

    def __len__(self):
        return len(self.y)

    def subset(self, idx):
        return WindowData(self.lon[idx], self.lat[idx], self.t[idx], self.y[idx], self.year[idx])


class _Packed:
    """Per-year blocks padded to a common size for batched factorization.

    Padding rows get unit diagonal and zero data so they add nothing.
    """

    def __init__(self, data: WindowData):
        years = np.unique(data.year)
        size = max(int(np.sum(data.year == yr)) for yr in years)
        nb = len(years)
        self.sq = np.zeros((3, nb, size, size))
        self.y = np.zeros((nb, size))
        self.mask = np.zeros((nb, size), bool)
        for b, yr in enumerate(years):
            i = np.flatnonzero(data.year == yr)
            c = len(i)
            dlat = data.lat[i, None] - data.lat[None, i]
            dlon = lon_difference(data.lon[i, None], data.lon[None, i])
            dt = data.t[i, None] - data.t[None, i]
            self.sq[:, b, :c, :c] = np.stack([dlat**2, dlon**2, dt**2])
            self.y[b, :c] = data.y[i]
            self.mask[b, :c] = True
        self.pair_mask = self.mask[:, :, None] & self.mask[:, None, :]
        self.n = int(self.mask.sum())


def _nll_grad(x, pk: _Packed, with_grad=True):
    phi, s2 = np.exp(x[0]), np.exp(x[4])
    scaled = pk.sq * np.exp(-2.0 * x[1:4])[:, None, None, None]
    dist = np.sqrt(scaled.sum(axis=0))
    E = np.where(pk.pair_mask, phi * np.exp(-dist), 0.0)
    K = E.copy()
    diag = np.arange(K.shape[1])
    K[:, diag, diag] += np.where(pk.mask, s2, 1.0)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite("year covariance is not positive definite") from exc
    Kinv = np.linalg.inv(K)
    a = np.einsum("bij,bj->bi", Kinv, pk.y)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
    nll = 0.5 * (logdet + np.sum(a * pk.y) + pk.n * np.log(2.0 * np.pi))
    if not with_grad:
        return nll
    Q = Kinv - a[:, :, None] * a[:, None, :]
    safe = np.where(dist > 0, dist, 1.0)
    grad = np.empty(5)
    grad[0] = 0.5 * np.sum(Q * E)
    for k in range(3):
        # d dist / d log theta_k = -scaled_k / dist
        dK = np.where(dist > 0, E * scaled[k] / safe, 0.0)
        grad[1 + k] = 0.5 * np.sum(Q * dK)
    grad[4] = 0.5 * s2 * np.sum(np.diagonal(Q, axis1=1, axis2=2) * pk.mask)
    return nll, grad


def gp_negative_log_likelihood(params: GpParams, data: WindowData) -> float:
    x = np.log([params.phi, params.theta_lat, params.theta_lon, params.theta_t, params.sigma2])
    return float(_nll_grad(x, _Packed(data), with_grad=False))


def moment_init(data: WindowData, half_width=5.0, half_span=46.0) -> GpParams:
    v = float(np.var(data.y))
    v = v if v > 0 else 1.0
    return GpParams(0.8 * v, half_width, half_width, half_span, float(np.sqrt(0.2 * v)))


def nugget_only_nll(data: WindowData):
    """Profile NLL of the white-noise model and its variance estimate."""
    s2 = max(float(np.mean(data.y**2)), SIGMA2_FLOOR)
    return 0.5 * len(data) * (np.log(2.0 * np.pi * s2) + 1.0), s2


def fit_mle(data: WindowData, init: GpParams | None = None, n_starts=5, seed=0, n_min=30,
            nugget_alpha=0.05, return_info=False):
    """Maximum-likelihood parameters from the best of ``n_starts`` L-BFGS-B runs.

    The first start is ``init`` (method-of-moments when omitted); the others
    perturb it by a log-normal factor.

    With pure noise the exponential kernel can mimic the nugget (a length
    scale collapses), leaving the phi / sigma^2 split unidentified. When
    ``nugget_alpha`` is set, the correlated component is kept only if it beats
    the white-noise model in a likelihood-ratio test (4 extra parameters);
    otherwise phi is set to its floor and sigma^2 takes the whole variance.
    """
    if len(data) < n_min:
        raise InsufficientData(f"{len(data)} observations < {n_min}")
    pk = _Packed(data)
    init = moment_init(data) if init is None else init
    x0 = np.clip(init.log_vector(), [b[0] for b in LOG_BOUNDS], [b[1] for b in LOG_BOUNDS])
    rng = np.random.default_rng(seed)

    def fun(x):
        try:
            f, g = _nll_grad(x, pk)
        except NonPositiveDefinite:
            return _PENALTY, np.zeros(5)
        # a huge finite value makes the line search back off
        return (f, g) if np.isfinite(f) else (_PENALTY, np.zeros(5))

    best = None
    for s in range(n_starts):
        start = x0 if s == 0 else x0 + rng.normal(0.0, 0.5, 5)
        start = np.clip(start, [b[0] for b in LOG_BOUNDS], [b[1] for b in LOG_BOUNDS])
        try:
            res = minimize(fun, start, jac=True, method="L-BFGS-B", bounds=LOG_BOUNDS,
                           options={"maxiter": 500})
        except (ValueError, FloatingPointError) as exc:
            log.debug("start %d failed: %s", s, exc)
            continue
        if np.isfinite(res.fun) and res.fun < _PENALTY and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizerFailed("all starts diverged")
    params = GpParams.from_log_vector(best.x, n_obs=len(data))
    nll = float(best.fun)
    null_nll, null_s2 = nugget_only_nll(data)
    white = nugget_alpha is not None and 2.0 * (null_nll - nll) < chi2.ppf(1.0 - nugget_alpha, 4)
    if white:
        params = GpParams(float(np.exp(LOG_BOUNDS[0][0])), init.theta_lat, init.theta_lon, init.theta_t,
                          float(np.sqrt(null_s2)), n_obs=len(data))
    if return_info:
        return params, {"nll": nll, "grad": np.asarray(best.jac), "nit": int(best.nit),
                        "x": np.asarray(best.x), "null_nll": null_nll, "nugget_only": bool(white)}
    return params


# ---------------------------------------------------------------- windows

def select_window(center_lon, center_lat, lon, lat, time, half_width=5.0, months=(8, 9, 10)):
    """Boolean mask of observations within the box and the given calendar months."""
    m = (np.abs(lat - center_lat) <= half_width) & (np.abs(lon_difference(lon, center_lon)) <= half_width)
    return m & np.isin(calendar_month(time), months)


def window_data(cell, profiles, level, mean_coef, mean_cell, half_width=5.0, months=(8, 9, 10),
                max_obs=None, seed=0) -> WindowData:
    """Mean-adjusted observations around a grid cell for one level.

    Values are adjusted with the local mean-field regression of ``mean_cell``
    evaluated at each observation's own location and yearday. When
    ``max_obs`` is set, a seeded random subset of that size is kept.
    """
    clon, clat = (float(v) for v in cell_center(*cell))
    m = np.flatnonzero(select_window(clon, clat, profiles.lon, profiles.lat, profiles.time, half_width, months))
    if max_obs is not None and len(m) > max_obs:
        m = np.sort(np.random.default_rng(seed).choice(m, max_obs, replace=False))
    mlon, mlat = (float(v) for v in cell_center(*mean_cell))
    lon, lat, t = profiles.lon[m], profiles.lat[m], profiles.time[m]
    mean = model_value(mean_coef, lat - mlat, lon_difference(lon, mlon), yearday(t))
    return WindowData(lon, lat, t, profiles.values[m, level] - mean, calendar_year(t))


class GpField:
    """Fitted GP parameters keyed by ((lat_idx, lon_idx), level)."""

    def __init__(self, entries=None):
        self.entries: dict = dict(entries or {})

    def __contains__(self, key):
        return key in self.entries

    def __len__(self):
        return len(self.entries)

    def set(self, cell, level, params: GpParams):
        self.entries[(tuple(int(c) for c in cell), int(level))] = params

    def get(self, cell, level):
        return self.entries.get((tuple(int(c) for c in cell), int(level)))

    def resolve(self, lon, lat, level, max_ring=10):
        """Params of the nearest valid cell, searching outward ring by ring."""
        i0, j0 = (int(v) for v in nearest_cell(lon, lat))
        hlon, hlat = cell_center(i0, j0)
        for ring in ring_cells(i0, j0, max_ring):
            ok = [c for c in ring if (p := self.get(c, level)) is not None and p.valid]
            if ok:
                clon, clat = cell_center(*np.array(ok).T)
                return self.get(ok[int(np.argmin(angle_deg(hlon, hlat, clon, clat)))], level)
        raise NoValidCell(f"no valid GP cell within {max_ring} rings of ({lon}, {lat})")

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for (cell, level), p in sorted(self.entries.items()):
            rows.append((cell[0], cell[1], LEVEL_NAMES[level], p.phi, p.theta_lat, p.theta_lon,
                         p.theta_t, p.sigma, p.n_obs, p.valid))
        return pd.DataFrame(rows, columns=["lat_idx", "lon_idx", "level", *PARAM_NAMES, "n_obs", "valid"])

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "GpField":
        out = cls()
        for r in df.itertuples(index=False):
            p = GpParams(r.phi, r.theta_lat, r.theta_lon, r.theta_t, r.sigma, int(r.n_obs), bool(r.valid))
            out.set((r.lat_idx, r.lon_idx), LEVEL_NAMES.index(str(r.level)), p)
        return out


def invalid_params(n_obs=0):
    return GpParams(np.nan, np.nan, np.nan, np.nan, np.nan, n_obs, valid=False)


# ----------------------------------------------------------- pair covariance

def lineage_covariance(params: GpParams, times) -> np.ndarray:
    """Covariance of the baseline and its signals (colocated, so time lags only)."""
    t = np.asarray(times, dtype=float)
    C = params.phi * np.exp(-np.abs(t[:, None] - t[None, :]) / params.theta_t)
    C[np.diag_indices_from(C)] = params.phi + params.sigma2
    return C


def difference_covariance(lineage_cov) -> np.ndarray:
    """Covariance of signal-minus-baseline differences, D C D^T with D = [-1 | I]."""
    C = np.asarray(lineage_cov, dtype=float)
    # expanded form of D C D^T
    return C[1:, 1:] - C[1:, :1] - C[:1, 1:] + C[0, 0]


class BlockCovariance:
    """Block-diagonal symmetric matrix with one dense block per lineage."""

    def __init__(self, blocks):
        self.blocks = [np.asarray(b, dtype=float) for b in blocks]
        sizes = [b.shape[0] for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.n = int(self.offsets[-1])
        self._groups = None

    def __len__(self):
        return self.n

    @property
    def sizes(self):
        return np.diff(self.offsets)

    def block_of(self, row):
        """(block, position in block) of a global row."""
        b = int(np.searchsorted(self.offsets, row, side="right") - 1)
        return b, int(row - self.offsets[b])

    def dense(self):
        return block_diag(*self.blocks) if self.blocks else np.zeros((0, 0))

    def diagonal(self):
        return np.concatenate([np.diag(b) for b in self.blocks]) if self.blocks else np.zeros(0)

    def inverse(self) -> "BlockCovariance":
        out = []
        for k, b in enumerate(self.blocks):
            try:
                c = cho_factor(b, lower=True)
            except np.linalg.LinAlgError as exc:
                raise NonPositiveDefinite(f"block {k} is not positive definite") from exc
            out.append(cho_solve(c, np.eye(len(b))))
        return BlockCovariance(out)

    def cholesky(self) -> "BlockCovariance":
        out = []
        for k, b in enumerate(self.blocks):
            try:
                out.append(np.linalg.cholesky(b))
            except np.linalg.LinAlgError as exc:
                raise NonPositiveDefinite(f"block {k} is not positive definite") from exc
        return BlockCovariance(out)

    def _grouped(self):
        if self._groups is None:
            groups = {}
            for k, s in enumerate(self.sizes):
                groups.setdefault(int(s), []).append(k)
            self._groups = [
                (np.array([np.arange(self.offsets[k], self.offsets[k + 1]) for k in ks]),
                 np.stack([self.blocks[k] for k in ks]))
                for s, ks in sorted(groups.items()) if s > 0
            ]
        return self._groups

    def matmul(self, X):
        """Block-diagonal matrix times ``X`` (vector or matrix with n rows)."""
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        X2 = X[:, None] if vec else X
        out = np.empty_like(X2)
        for idx, stack in self._grouped():
            out[idx] = np.einsum("bij,bjk->bik", stack, X2[idx])
        return out[:, 0] if vec else out

    __matmul__ = matmul

    def subset(self, keep) -> "BlockCovariance":
        """Restrict to the rows in boolean ``keep``; emptied blocks are dropped."""
        keep = np.asarray(keep, bool)
        out = []
        for k, b in enumerate(self.blocks):
            m = keep[self.offsets[k]:self.offsets[k + 1]]
            if m.any():
                out.append(b[np.ix_(m, m)])
        return BlockCovariance(out)

    def scaled(self, factor) -> "BlockCovariance":
        return BlockCovariance([factor * b for b in self.blocks])


def assemble_block_covariance(lineage_times, params) -> BlockCovariance:
    """One difference-covariance block per lineage, in the given order.

    ``lineage_times[k]`` holds the baseline time followed by its signal times;
    ``params[k]`` is that lineage's GpParams.
    """
    return BlockCovariance([
        difference_covariance(lineage_covariance(p, t)) for t, p in zip(lineage_times, params)
    ])
