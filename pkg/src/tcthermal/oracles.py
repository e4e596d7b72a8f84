"""Independent reference computations used to check the smoother."""
from __future__ import annotations

import numpy as np
from scipy.linalg import null_space
from scipy.optimize import minimize

from .tps import DesignMatrices, TpsSystem, affine_basis, build_design, weight_operator


def oracle_quadratic_min(y, W, lam, matrices: DesignMatrices, n_starts=3, seed=0, side_condition=True):
    """Minimize the penalized weighted objective numerically from random starts.

    Works directly from the objective (value, gradient, Hessian-vector
    products) with a trust-region Krylov method. Under ``side_condition``
    delta is parameterized through an SVD null-space basis of the knot
    affine matrix. Returns (delta, beta).
    """
    y = np.asarray(y, dtype=float)
    apply_W = weight_operator(W)
    B, S, m = matrices.B, matrices.S, matrices.m
    N = null_space(affine_basis(matrices.knots)) if side_condition else np.eye(m)
    k = N.shape[1]

    def unpack(v):
        return np.concatenate([N @ v[:k], v[k:]])

    def fold(g):
        return np.concatenate([N.T @ g[:m], g[m:]])

    def f(v):
        c = unpack(v)
        r = y - B @ c
        return r @ apply_W(r) + lam * c[:m] @ S @ c[:m]

    def grad(v):
        c = unpack(v)
        g = -2.0 * B.T @ apply_W(y - B @ c)
        g[:m] += 2.0 * lam * S @ c[:m]
        return fold(g)

    def hessp(v, p):
        q = unpack(p)
        h = 2.0 * B.T @ apply_W(B @ q)
        h[:m] += 2.0 * lam * S @ q[:m]
        return fold(h)

    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_starts):
        res = minimize(f, rng.normal(size=k + 3), jac=grad, hessp=hessp, method="trust-krylov",
                       options={"gtol": 1e-12, "maxiter": 5000})
        if best is None or res.fun < best.fun:
            best = res
    c = unpack(best.x)
    return c[:m], c[m:]


def oracle_literal_loocv(y, weights, matrices: DesignMatrices, lam, side_condition=True, max_n=200):
    """sum_i w_i (y_i - g^{(-i)}(xi_i))^2 with n separate refits on diagonal weights."""
    y, weights = np.asarray(y, dtype=float), np.asarray(weights, dtype=float)
    n = len(y)
    if n > max_n:
        raise ValueError(f"literal LOOCV limited to n <= {max_n}")
    total = 0.0
    for i in range(n):
        keep = np.arange(n) != i
        sub = build_design(matrices.points[keep], matrices.knots)
        f = TpsSystem(sub, weights[keep], side_condition).fit(y[keep], lam)
        pred = matrices.R[i] @ f.delta + matrices.L[:, i] @ f.beta
        total += weights[i] * (y[i] - pred) ** 2
    return total
