import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from helpers import random_block_weights, random_instance, random_points, small_knots, smooth_signal
from tcthermal.errors import SingularSystem
from tcthermal.oracles import oracle_quadratic_min
from tcthermal.tps import (
    TpsSystem,
    _Factor,
    affine_basis,
    build_design,
    coefficient_covariance,
    fit,
    fit_natural,
    fit_natural_gls,
    knot_grid,
    natural_fitted_values,
    objective,
    predict,
    prediction_basis,
    prediction_grid,
    prediction_variance,
    tps_kernel,
)


def test_knot_grid():
    k = knot_grid()
    assert k.shape == (1485, 2)
    assert np.unique(k[:, 0]).size == 33 and np.unique(k[:, 1]).size == 45
    assert np.all(np.diff(np.unique(k[:, 0])) == 0.5)
    assert np.all(np.diff(np.unique(k[:, 1])) == 0.5)
    assert k.min(axis=0).tolist() == [-8.0, -2.0] and k.max(axis=0).tolist() == [8.0, 20.0]


def test_kernel_examples():
    assert tps_kernel([[1.0, 2.0]], [[1.0, 2.0]])[0, 0] == 0.0
    assert tps_kernel([[0.0, 0.0]], [[1.0, 0.0]])[0, 0] == 0.0
    r = math.sqrt(math.e)
    assert tps_kernel([[0.0, 0.0]], [[r, 0.0]])[0, 0] == pytest.approx(math.e / (16 * math.pi), rel=1e-14)
    knots = small_knots()
    X = np.vstack([knots[7], [0.3, 4.1]])
    assert build_design(X, knots).R[0, 7] == 0.0
    S = build_design(random_points(np.random.default_rng(0), 5), small_knots()).S
    assert np.array_equal(S, S.T) and np.all(np.diag(S) == 0)


def test_affine_data_reproduced():
    rng = np.random.default_rng(1)
    X, _, mats = random_instance(rng, n=50)
    y = 1.5 - 0.3 * X[:, 0] + 0.07 * X[:, 1]
    for lam in (1e-3, 1.0, 1e3):
        f = fit(y, None, lam, mats)
        assert np.max(np.abs(predict(f, X) - y)) <= 1e-8
        assert f.delta @ mats.S @ f.delta <= 1e-8 * (y @ y)


def test_matches_quadratic_oracle_and_beats_perturbations():
    rng = np.random.default_rng(2)
    X, y, mats = random_instance(rng, n=60)
    W, _ = random_block_weights(rng, 60)
    f = fit(y, W, 0.7, mats)
    best = objective(y, W, 0.7, mats, f.delta, f.beta)
    Z = mats.Z
    for _ in range(500):
        scale = 10 ** rng.uniform(-4, 0)
        d = f.delta + scale * Z @ rng.normal(size=Z.shape[1])
        b = f.beta + scale * rng.normal(size=3)
        assert objective(y, W, 0.7, mats, d, b) >= best - 1e-9 * abs(best)
    od, ob = oracle_quadratic_min(y, W, 0.7, mats, seed=3)
    fitted, ofit = mats.B @ f.coef, mats.R @ od + mats.L.T @ ob
    assert np.linalg.norm(fitted - ofit) / np.linalg.norm(fitted) <= 1e-6


def test_huge_lambda_gives_affine_regression():
    rng = np.random.default_rng(4)
    X, y, mats = random_instance(rng, n=70)
    f = fit(y, None, 1e9, mats)
    A = affine_basis(X).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    assert np.max(np.abs(predict(f, X) - A @ coef)) <= 1e-4


def test_predict_at_knots_and_grid():
    rng = np.random.default_rng(5)
    knots = small_knots()
    X, y, mats = random_instance(rng, knots=knots)
    f = fit(y, None, 1.0, mats)
    assert np.all(np.isfinite(predict(f, knots)))
    d, t, grid = prediction_grid()
    assert grid.shape == (40000, 2) and len(d) == 400 and len(t) == 100
    assert d[0] == pytest.approx(-8 + 0.02) and t[-1] == pytest.approx(20 - 0.11)
    assert predict(f, grid).shape == (40000,)


def test_zero_covariance_gives_zero_variance():
    rng = np.random.default_rng(6)
    X, y, mats = random_instance(rng, n=40)
    f = fit(y, None, 1.0, mats)
    assert np.all(prediction_variance(f, None, X) == 0)
    assert np.all(prediction_variance(f, np.zeros((40, 40)), X) == 0)


def test_variance_symmetric_under_reflection():
    rng = np.random.default_rng(7)
    half = random_points(rng, 30)
    X = np.vstack([half, half * [-1, 1]])
    y = np.tile(rng.normal(size=30), 2)
    var = np.tile(rng.uniform(0.1, 0.5, 30), 2)
    mats = build_design(X, small_knots())
    f = fit(y, 1 / var, 2.0, mats)
    probes = random_points(rng, 20)
    v1 = prediction_variance(f, np.diag(var), probes)
    v2 = prediction_variance(f, np.diag(var), probes * [-1, 1])
    assert np.all(v1 >= 0)
    assert np.allclose(v1, v2, rtol=1e-8, atol=1e-12)
    assert np.allclose(predict(f, probes), predict(f, probes * [-1, 1]), atol=1e-8)


def test_variance_diagonal_matches_dense():
    rng = np.random.default_rng(8)
    X, y, mats = random_instance(rng, n=60)
    W, Sigma = random_block_weights(rng, 60)
    f = fit(y, W, 0.5, mats)
    probes = random_points(rng, 150)
    P = prediction_basis(probes, mats.knots)
    A = np.zeros((mats.m + 3, mats.m + 3))
    # dense (m+3) x (m+3) system restricted to the side-condition subspace
    Z = mats.Z
    Zb = np.zeros((mats.m + 3, mats.m))
    Zb[: mats.m, : mats.m - 3] = Z
    Zb[mats.m:, mats.m - 3:] = np.eye(3)
    B = mats.B
    A = Zb.T @ (B.T @ W @ B) @ Zb
    A[: mats.m - 3, : mats.m - 3] += 0.5 * Z.T @ mats.S @ Z
    Ainv = Zb @ np.linalg.inv(A) @ Zb.T
    full = P @ Ainv @ B.T @ W @ Sigma @ W @ B @ Ainv @ P.T
    assert np.max(np.abs(prediction_variance(f, Sigma, probes, chunk=37) - np.diag(full))) <= 1e-10


def test_variance_monte_carlo():
    rng = np.random.default_rng(9)
    X, _, mats = random_instance(rng, n=60)
    W, Sigma = random_block_weights(rng, 60)
    s = smooth_signal(X)
    system = TpsSystem(mats, W)
    probes = random_points(rng, 20)
    P = prediction_basis(probes, mats.knots)
    M = system.smoother(1.0)
    Lc = np.linalg.cholesky(Sigma)
    draws = s[:, None] + Lc @ rng.normal(size=(60, 2000))
    preds = P @ (M @ draws)
    emp = preds.var(axis=1, ddof=1)
    formula = prediction_variance(system.fit(s, 1.0), Sigma, probes)
    assert np.all(np.abs(emp / formula - 1) <= 0.10)


def test_natural_equivalence():
    rng = np.random.default_rng(10)
    X, y, _ = random_instance(rng, n=40)
    W, _ = random_block_weights(rng, 40)
    mats = build_design(X, X)
    f = fit(y, W, 0.8, mats)
    d, b = fit_natural_gls(y, W, 0.8, X)
    assert np.max(np.abs(predict(f, X) - natural_fitted_values(d, b, X))) <= 1e-6


def test_natural_identity_weights():
    rng = np.random.default_rng(11)
    X, y, _ = random_instance(rng, n=30)
    d1, b1 = fit_natural(y, 0.3, X)
    d2, b2 = fit_natural_gls(y, np.eye(30), 0.3, X)
    assert np.allclose(d1, d2, rtol=1e-10, atol=1e-12) and np.allclose(b1, b2, rtol=1e-10, atol=1e-12)
    ya = 2.0 + 0.5 * X[:, 0] - 0.1 * X[:, 1]
    d, b = fit_natural(ya, 0.3, X)
    assert np.max(np.abs(natural_fitted_values(d, b, X) - ya)) <= 1e-8
    assert abs(d @ tps_kernel(X, X) @ d) <= 1e-8 * (ya @ ya)


def test_linearity_in_y():
    rng = np.random.default_rng(12)
    X, y1, mats = random_instance(rng, n=50)
    y2 = rng.normal(size=50)
    W, _ = random_block_weights(rng, 50)
    system = TpsSystem(mats, W)
    probes = random_points(rng, 30)
    a = predict(system.fit(y1 + y2, 0.4), probes)
    b = predict(system.fit(y1, 0.4), probes) + predict(system.fit(y2, 0.4), probes)
    assert np.max(np.abs(a - b)) <= 1e-9


def test_monotone_regularization():
    rng = np.random.default_rng(13)
    X, y, mats = random_instance(rng, n=60)
    w = rng.uniform(1, 5, 60)
    system = TpsSystem(mats, w)
    fits, pens = [], []
    for lam in np.logspace(-3, 3, 15):
        f = system.fit(y, lam)
        r = y - mats.B @ f.coef
        fits.append(r @ (w * r))
        pens.append(f.delta @ mats.S @ f.delta)
    assert np.all(np.diff(fits) >= -1e-9 * max(fits))
    assert np.all(np.diff(pens) <= 1e-9 * max(pens))


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_translation_invariance(sx, sy):
    rng = np.random.default_rng(14)
    X, y, mats = random_instance(rng, n=40)
    shift = np.array([sx, sy])
    probes = random_points(rng, 10)
    a = predict(fit(y, None, 0.9, mats), probes)
    moved = build_design(X + shift, mats.knots + shift)
    b = predict(fit(y, None, 0.9, moved), probes + shift)
    assert np.max(np.abs(a - b)) <= 1e-8


def test_literal_system_solves_stationarity():
    rng = np.random.default_rng(15)
    X, y, mats = random_instance(rng, n=60)
    W, _ = random_block_weights(rng, 60)
    f = fit(y, W, 0.7, mats, side_condition=False)
    B = mats.B
    A = B.T @ W @ B
    A[: mats.m, : mats.m] += 0.7 * mats.S
    rhs = B.T @ W @ y
    assert np.linalg.norm(A @ f.coef - rhs) <= 1e-8 * np.linalg.norm(rhs)


def test_jitter_and_singular_system():
    A = np.diag([1.0, 1.0, 0.0])
    f = _Factor(A, definite=True)
    assert f.jitter > 0
    with pytest.raises(SingularSystem):
        _Factor(np.diag([1.0, -1.0, 1.0]), definite=True)


def test_coefficient_covariance_shape():
    rng = np.random.default_rng(16)
    X, y, mats = random_instance(rng, n=40)
    W, Sigma = random_block_weights(rng, 40)
    f = fit(y, W, 1.0, mats)
    C = coefficient_covariance(f, Sigma)
    assert C.shape == (mats.m + 3, mats.m + 3)
    assert np.allclose(C, C.T)
    assert np.min(np.linalg.eigvalsh(C)) > -1e-10
