"""Fixed-knot thin plate spline smoothing with generalized least squares weights.

The fitted surface is

    g(d, tau) = sum_j delta_j * eta(|xi - knot_j|) + beta_0 + beta_1 * d + beta_2 * tau,
    eta(r) = r^2 log(r^2) / (16 pi),  eta(0) = 0,

chosen to minimize (y - B c)^T W (y - B c) + lam * delta^T S delta with
B = [R | L^T] and S the kernel evaluated between knots.

By default delta is restricted to the subspace orthogonal to the affine
polynomials on the knots (T delta = 0). Without that restriction S is
indefinite and the objective is unbounded below; the unconstrained
stationary point is still available with ``side_condition=False``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, lapack

from .errors import SingularSystem

log = logging.getLogger(__name__)

D_RANGE = (-8.0, 8.0)
TAU_RANGE = (-2.0, 20.0)
KNOT_SPACING = 0.5
GRID_SHAPE = (400, 100)
JITTER_START, JITTER_MAX = 1e-10, 1e-6


def knot_grid(spacing=KNOT_SPACING, d_range=D_RANGE, tau_range=TAU_RANGE) -> np.ndarray:
    """Knots on a regular lattice, endpoints included; rows are (d, tau), tau fastest."""
    nd = int(round((d_range[1] - d_range[0]) / spacing)) + 1
    nt = int(round((tau_range[1] - tau_range[0]) / spacing)) + 1
    d = d_range[0] + spacing * np.arange(nd)
    t = tau_range[0] + spacing * np.arange(nt)
    dd, tt = np.meshgrid(d, t, indexing="ij")
    return np.column_stack([dd.ravel(), tt.ravel()])


def prediction_grid(shape=GRID_SHAPE, d_range=D_RANGE, tau_range=TAU_RANGE):
    """Cell-center axes and the flattened (d, tau) points, d-major."""
    nd, nt = shape
    d = d_range[0] + (np.arange(nd) + 0.5) * (d_range[1] - d_range[0]) / nd
    t = tau_range[0] + (np.arange(nt) + 0.5) * (tau_range[1] - tau_range[0]) / nt
    dd, tt = np.meshgrid(d, t, indexing="ij")
    return d, t, np.column_stack([dd.ravel(), tt.ravel()])


def tps_kernel(a, b) -> np.ndarray:
    """eta between every row of ``a`` and every row of ``b``."""
    a, b = np.atleast_2d(a), np.atleast_2d(b)
    r2 = (a[:, None, 0] - b[None, :, 0]) ** 2 + (a[:, None, 1] - b[None, :, 1]) ** 2
    out = np.zeros_like(r2)
    pos = r2 > 0
    out[pos] = r2[pos] * np.log(r2[pos]) / (16.0 * np.pi)
    return out


def affine_basis(points) -> np.ndarray:
    """3 x n matrix of [1; d; tau]."""
    points = np.atleast_2d(points)
    return np.vstack([np.ones(len(points)), points[:, 0], points[:, 1]])


@dataclass
class DesignMatrices:
    points: np.ndarray
    knots: np.ndarray
    R: np.ndarray
    L: np.ndarray
    S: np.ndarray
    _Z: np.ndarray = field(default=None, repr=False)

    @property
    def n(self):
        return self.R.shape[0]

    @property
    def m(self):
        return self.R.shape[1]

    @property
    def B(self):
        return np.hstack([self.R, self.L.T])

    @property
    def Z(self):
        """Orthonormal basis of {delta : [1; d; tau]_knots delta = 0}."""
        if self._Z is None:
            Q, _ = np.linalg.qr(affine_basis(self.knots).T, mode="complete")
            self._Z = Q[:, 3:]
        return self._Z


_KNOT_CACHE: dict = {}


def _knot_cached(knots):
    """(Z, S, Z^T S Z) for a knot set, shared across designs with identical knots."""
    key = (knots.shape, knots.tobytes())
    if key not in _KNOT_CACHE:
        if len(_KNOT_CACHE) >= 4:
            _KNOT_CACHE.pop(next(iter(_KNOT_CACHE)))
        S = tps_kernel(knots, knots)
        Q, _ = np.linalg.qr(affine_basis(knots).T, mode="complete")
        Z = Q[:, 3:]
        Sr = Z.T @ S @ Z
        _KNOT_CACHE[key] = (Z, S, 0.5 * (Sr + Sr.T))
    return _KNOT_CACHE[key]


def _reduced_penalty(matrices: DesignMatrices):
    Z, S, Sr = _knot_cached(matrices.knots)
    if matrices.S is S or np.array_equal(matrices.S, S):
        return Sr
    Sr = matrices.Z.T @ matrices.S @ matrices.Z
    return 0.5 * (Sr + Sr.T)


def build_design(points, knots=None) -> DesignMatrices:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    knots = knot_grid() if knots is None else np.atleast_2d(np.asarray(knots, dtype=float))
    Z, S, _ = _knot_cached(knots)
    return DesignMatrices(points, knots, tps_kernel(points, knots), affine_basis(points), S, Z)


# ------------------------------------------------------------------ weights

def weight_operator(W):
    """Callable applying W to an (n, k) array; accepts None, weights, dense or block matrices."""
    if W is None:
        return lambda X: np.array(X, dtype=float, copy=True)
    if hasattr(W, "matmul"):
        return W.matmul
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        return lambda X: W[:, None] * X if np.ndim(X) == 2 else W * X
    return lambda X: W @ X


# ---------------------------------------------------------------- solvers

class _Factor:
    """Factorization of a symmetric system, with diagonal jitter on failure."""

    def __init__(self, A, definite: bool):
        self.definite = definite
        scale = np.trace(A) / len(A) if len(A) else 1.0
        scale = abs(scale) if scale != 0 else 1.0
        eps = 0.0
        while True:
            Aj = A if eps == 0.0 else A + eps * scale * np.eye(len(A))
            if self._try(Aj):
                if eps:
                    log.warning("system needed diagonal jitter %.1e", eps)
                self.jitter = eps
                return
            eps = JITTER_START if eps == 0.0 else eps * 10.0
            if eps > JITTER_MAX * 1.0001:
                raise SingularSystem("factorization failed after jitter escalation")

    def _try(self, A):
        if self.definite:
            try:
                self._c = cho_factor(A, lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                return False
            return bool(np.all(np.isfinite(self._c[0])))
        lu, ipiv, info = lapack.dsytrf(A, lower=1)
        if info != 0 or not np.all(np.isfinite(lu)):
            return False
        self._lu, self._ipiv = lu, ipiv
        return True

    def solve(self, rhs):
        if self.definite:
            return cho_solve(self._c, rhs, check_finite=False)
        x, info = lapack.dsytrs(self._lu, self._ipiv, rhs, lower=1)
        if info != 0:
            raise SingularSystem(f"dsytrs info={info}")
        return x


class TpsSystem:
    """Weighted normal equations for one data set, reusable across lambda."""

    def __init__(self, matrices: DesignMatrices, W=None, side_condition=True):
        self.mat = matrices
        self.W = W
        self.apply_W = weight_operator(W)
        self.side_condition = side_condition
        B = matrices.B
        self.WB = self.apply_W(B)
        G = B.T @ self.WB
        self.G = 0.5 * (G + G.T)
        m = matrices.m
        if side_condition:
            Z = matrices.Z
            GZ = np.empty((len(G), m))
            GZ[:, : m - 3] = G[:, :m] @ Z
            GZ[:, m - 3:] = G[:, m:]
            Gr = np.empty((m, m))
            Gr[: m - 3] = Z.T @ GZ[:m]
            Gr[m - 3:] = GZ[m:]
            self.Gr = 0.5 * (Gr + Gr.T)
            self.Sr = _reduced_penalty(matrices)
        self._cache = (None, None)

    @property
    def p(self):
        return self.mat.m + 3

    def factor(self, lam) -> _Factor:
        if self._cache[0] == lam:
            return self._cache[1]
        m = self.mat.m
        if self.side_condition:
            A = self.Gr.copy()
            A[: m - 3, : m - 3] += lam * self.Sr
            f = _Factor(A, definite=True)
        else:
            A = self.G.copy()
            A[:m, :m] += lam * self.mat.S
            f = _Factor(A, definite=False)
        self._cache = (lam, f)
        return f

    def _reduce(self, rhs):
        if not self.side_condition:
            return rhs
        m = self.mat.m
        return np.concatenate([self.mat.Z.T @ rhs[:m], rhs[m:]])

    def _expand(self, u):
        if not self.side_condition:
            return u
        m = self.mat.m
        return np.concatenate([self.mat.Z @ u[: m - 3], u[m - 3:]])

    def solve(self, lam, rhs):
        """Coefficients c = A^+ rhs for right-hand sides in coefficient space."""
        return self._expand(self.factor(lam).solve(self._reduce(rhs)))

    def fit(self, y, lam) -> "TpsFit":
        if not lam > 0:
            raise ValueError("lambda must be positive")
        y = np.asarray(y, dtype=float)
        c = self.solve(lam, self.mat.B.T @ self.apply_W(y))
        if not np.all(np.isfinite(c)):
            raise SingularSystem("non-finite coefficients")
        m = self.mat.m
        return TpsFit(c[:m], c[m:], lam, self.mat.knots, self)

    def smoother(self, lam) -> np.ndarray:
        """A^+ B^T W, the (m+3) x n map from data to coefficients."""
        return self.solve(lam, self.WB.T)

    def hat_diagonal(self, lam) -> np.ndarray:
        """Diagonal of B A^+ B^T W without forming the n x n matrix."""
        return np.einsum("ij,ji->i", self.mat.B, self.smoother(lam))

    def spectral(self) -> "SpectralPath":
        """Simultaneous diagonalization of the data-fit and penalty matrices (side condition only)."""
        if not self.side_condition:
            raise ValueError("the spectral path needs the side-condition parameterization")
        return SpectralPath(self)


class SpectralPath:
    """Fitted values and hat diagonals for many lambdas from one decomposition.

    With P = diag(Sr, 0) and M0 = Gr + c P (positive definite), the
    generalized eigenproblem P v = mu M0 v gives V^T M0 V = I and
    V^T P V = diag(mu), so (Gr + lam P)^-1 = V diag(1 / (1 + (lam - c) mu)) V^T.
    """

    def __init__(self, system: TpsSystem):
        m = system.mat.m
        P = np.zeros_like(system.Gr)
        P[: m - 3, : m - 3] = system.Sr
        self.c = float(np.trace(system.Gr) / max(np.trace(P), 1e-300))
        self.mu, V = eigh(P, system.Gr + self.c * P, check_finite=False)
        self.mu = np.clip(self.mu, 0.0, None)
        # F = B Zb V and G = W B Zb V, built through the reduced coordinates
        BZ = np.empty((system.mat.n, m))
        B = system.mat.B
        BZ[:, : m - 3] = B[:, :m] @ system.mat.Z
        BZ[:, m - 3:] = B[:, m:]
        self.F = BZ @ V
        self.G = system.apply_W(self.F)
        self.FG = self.F * self.G

    def shrink(self, lam):
        return 1.0 / (1.0 + (lam - self.c) * self.mu)

    def hat_diagonal(self, lam) -> np.ndarray:
        return self.FG @ self.shrink(lam)

    def fitted(self, y, lam) -> np.ndarray:
        return self.F @ ((self.G.T @ np.asarray(y, dtype=float)) * self.shrink(lam))


@dataclass
class TpsFit:
    delta: np.ndarray
    beta: np.ndarray
    lam: float
    knots: np.ndarray
    system: TpsSystem = field(default=None, repr=False)

    @property
    def coef(self):
        return np.concatenate([self.delta, self.beta])


def fit(y, W, lam, matrices: DesignMatrices, side_condition=True) -> TpsFit:
    return TpsSystem(matrices, W, side_condition).fit(y, lam)


def prediction_basis(points, knots) -> np.ndarray:
    """[R_hat | L_hat^T] for new points."""
    points = np.atleast_2d(points)
    return np.hstack([tps_kernel(points, knots), affine_basis(points).T])


def predict(tps: TpsFit, points, chunk=4000) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        out[s:s + chunk] = prediction_basis(points[s:s + chunk], tps.knots) @ tps.coef
    return out


def objective(y, W, lam, matrices: DesignMatrices, delta, beta) -> float:
    r = np.asarray(y, dtype=float) - matrices.R @ delta - matrices.L.T @ beta
    return float(r @ weight_operator(W)(r) + lam * delta @ matrices.S @ delta)


# ------------------------------------------------------------ uncertainty

def coefficient_covariance(tps: TpsFit, Sigma) -> np.ndarray:
    """A^+ B^T W Sigma W B A^+ for the data covariance ``Sigma``."""
    M = tps.system.smoother(tps.lam)
    if Sigma is None:
        return np.zeros((len(M), len(M)))
    SMt = weight_operator(Sigma)(M.T)
    C = M @ SMt
    return 0.5 * (C + C.T)


def prediction_variance(tps: TpsFit, Sigma, points, chunk=4000, coef_cov=None) -> np.ndarray:
    """Diagonal of P C P^T with P the prediction basis, streamed in row chunks."""
    C = coefficient_covariance(tps, Sigma) if coef_cov is None else coef_cov
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        P = prediction_basis(points[s:s + chunk], tps.knots)
        out[s:s + chunk] = np.einsum("ij,ij->i", P @ C, P)
    return np.maximum(out, 0.0)


def linear_combination_variance(tps: TpsFit, weights, points, coef_cov) -> float:
    """Variance of sum_i weights_i * g(points_i)."""
    a = prediction_basis(points, tps.knots).T @ np.asarray(weights, dtype=float)
    return float(max(a @ coef_cov @ a, 0.0))


# -------------------------------------------------------- natural splines

def _natural_solve(y, W, lam, points):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    R = tps_kernel(points, points)
    L = affine_basis(points)
    apply_W = weight_operator(W)
    WR, WLt = apply_W(R), apply_W(L.T)
    A = np.block([[R @ WR + lam * R, R @ WLt], [L @ WR, L @ WLt]])
    rhs = np.concatenate([R @ apply_W(y), L @ apply_W(y)])
    A = 0.5 * (A + A.T)
    coef = _Factor(A, definite=False).solve(rhs)
    n = len(points)
    return coef[:n], coef[n:], R, L


def fit_natural(y, lam, points):
    """Knots at the data points, identity weights; returns (delta, beta)."""
    delta, beta, _, _ = _natural_solve(np.asarray(y, dtype=float), None, lam, points)
    return delta, beta


def fit_natural_gls(y, W, lam, points):
    """Knots at the data points with weight matrix W; returns (delta, beta)."""
    delta, beta, _, _ = _natural_solve(np.asarray(y, dtype=float), W, lam, points)
    return delta, beta


def natural_fitted_values(delta, beta, points):
    points = np.atleast_2d(points)
    return tps_kernel(points, points) @ delta + affine_basis(points).T @ beta
