"""Weighted leave-one-out cross-validation and regularization selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import LeverageOne
from .tps import DesignMatrices, TpsSystem

LEVERAGE_TOL = 1e-10
SIGNAL_REGION = ((-3.0, 3.0), (0.0, 12.0))


def lambda_grid(lo=1e-3, hi=500.0, n=40) -> np.ndarray:
    return np.logspace(np.log10(lo), np.log10(hi), n)


def hat_diagonal(matrices: DesignMatrices, W, lam, side_condition=True) -> np.ndarray:
    return TpsSystem(matrices, W, side_condition).hat_diagonal(lam)


def _loocv_terms(system: TpsSystem, y, weights, lam):
    M = system.smoother(lam)
    B = system.mat.B
    h = np.einsum("ij,ji->i", B, M)
    if np.any(h >= 1.0 - LEVERAGE_TOL):
        raise LeverageOne(f"max leverage {h.max():.12f} at lambda={lam:g}")
    resid = (y - B @ (M @ y)) / (1.0 - h)
    return weights * resid**2, h


def loocv_score(y, weights, matrices: DesignMatrices, lam, W=None, system: TpsSystem | None = None) -> float:
    """sum_i w_i ((y_i - yhat_i) / (1 - h_ii))^2 from a single fit.

    The fit uses ``W`` when given and ``diag(weights)`` otherwise.
    """
    y, weights = np.asarray(y, dtype=float), np.asarray(weights, dtype=float)
    system = TpsSystem(matrices, weights if W is None else W) if system is None else system
    terms, _ = _loocv_terms(system, y, weights, lam)
    return float(terms.sum())


def in_region(points, region=SIGNAL_REGION) -> np.ndarray:
    points = np.atleast_2d(points)
    (d0, d1), (t0, t1) = region
    return (points[:, 0] >= d0) & (points[:, 0] <= d1) & (points[:, 1] >= t0) & (points[:, 1] <= t1)


@dataclass
class CvCurve:
    lambdas: np.ndarray
    scores: np.ndarray
    trace_h: np.ndarray
    scores_s: np.ndarray
    scores_sc: np.ndarray

    def __post_init__(self):
        order = np.argsort(self.lambdas)
        for name in ("lambdas", "scores", "trace_h", "scores_s", "scores_sc"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float)[order])

    @property
    def lambda_min(self):
        return select_lambda(self.lambdas, self.scores)[0]

    @property
    def lambda_cv(self):
        return select_lambda(self.lambdas, self.scores)[1]

    def region_minimizers(self):
        """Lambda minimizing the signal-region and complement CV curves."""
        return (float(self.lambdas[np.argmin(self.scores_s)]), float(self.lambdas[np.argmin(self.scores_sc)]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"lambda": self.lambdas, "cv_score": self.scores, "cv_score_S": self.scores_s,
                             "cv_score_Sc": self.scores_sc, "trace_H": self.trace_h})


def _spectral_terms(path, y, weights, lam):
    h = path.hat_diagonal(lam)
    if np.any(h >= 1.0 - LEVERAGE_TOL):
        raise LeverageOne(f"max leverage {h.max():.12f} at lambda={lam:g}")
    resid = (y - path.fitted(y, lam)) / (1.0 - h)
    return weights * resid**2, h


def cv_curve(system: TpsSystem, y, weights, lambdas=None, region=SIGNAL_REGION, method="direct") -> CvCurve:
    """CV(lambda) over a grid, split into the signal region and its complement.

    ``method="spectral"`` evaluates every lambda from one simultaneous
    diagonalization instead of one factorization per lambda.
    """
    y, weights = np.asarray(y, dtype=float), np.asarray(weights, dtype=float)
    lambdas = lambda_grid() if lambdas is None else np.asarray(lambdas, dtype=float)
    inside = in_region(system.mat.points, region)
    if method == "spectral":
        path = system.spectral()

        def terms_at(lam):
            return _spectral_terms(path, y, weights, lam)
    elif method == "direct":
        def terms_at(lam):
            return _loocv_terms(system, y, weights, lam)
    else:
        raise ValueError(f"unknown method {method!r}")
    scores, trace, s_in, s_out = [], [], [], []
    for lam in lambdas:
        terms, h = terms_at(lam)
        scores.append(terms.sum())
        trace.append(h.sum())
        s_in.append(terms[inside].sum())
        s_out.append(terms[~inside].sum())
    return CvCurve(lambdas, scores, trace, s_in, s_out)


def select_lambda(lambdas, scores=None, tolerance=1.01):
    """(lambda_min, lambda_cv): the argmin, and the smallest lambda within ``tolerance`` of it."""
    if scores is None:
        lambdas, scores = lambdas.lambdas, lambdas.scores
    lambdas, scores = np.asarray(lambdas, dtype=float), np.asarray(scores, dtype=float)
    if lambdas.size == 0:
        raise ValueError("empty CV curve")
    order = np.argsort(lambdas)
    lambdas, scores = lambdas[order], scores[order]
    k = int(np.argmin(scores))
    within = np.flatnonzero(scores <= tolerance * scores[k])
    return float(lambdas[k]), float(lambdas[within.min()])
