"""Checks on the independent quadratic-minimization oracle itself."""
import numpy as np
import pytest

from tcthermal.oracles import oracle_literal_loocv, oracle_quadratic_min
from tcthermal.tps import TpsSystem, affine_basis, build_design, objective

from helpers import random_block_weights, random_instance, random_points, small_knots


def test_affine_data_gives_zero_objective():
    rng = np.random.default_rng(11)
    X = random_points(rng, 50)
    y = 0.4 - 0.2 * X[:, 0] + 0.05 * X[:, 1]
    mats = build_design(X, small_knots())
    W, _ = random_block_weights(rng, 50)
    delta, beta = oracle_quadratic_min(y, W, 2.0, mats, seed=1)
    assert objective(y, W, 2.0, mats, delta, beta) <= 1e-16
    assert np.allclose(beta, [0.4, -0.2, 0.05], atol=1e-8)


def test_scaling_weights_and_lambda_together_leaves_minimizer():
    rng = np.random.default_rng(12)
    X, y, mats = random_instance(rng, n=60)
    W, _ = random_block_weights(rng, 60)
    ref = TpsSystem(mats, W).fit(y, 0.8)
    d2, b2 = oracle_quadratic_min(y, 5.0 * W, 4.0, mats, seed=2)
    fitted_ref = mats.B @ ref.coef
    fitted = mats.B @ np.concatenate([d2, b2])
    assert np.max(np.abs(fitted - fitted_ref)) <= 1e-6 * np.max(np.abs(fitted_ref))


def test_large_lambda_delta_follows_inverse_penalty_direction():
    # for large lambda, lambda * delta -> Z (Z'SZ)^-1 Z' R' W r0 with r0 the affine-fit residual
    rng = np.random.default_rng(13)
    X, y, mats = random_instance(rng, n=70)
    W = np.diag(rng.uniform(0.5, 2.0, 70))
    L = mats.L.T
    beta0 = np.linalg.solve(L.T @ W @ L, L.T @ W @ y)
    r0 = y - L @ beta0
    Z = mats.Z
    direction = Z @ np.linalg.solve(Z.T @ mats.S @ Z, Z.T @ mats.R.T @ W @ r0)
    lam = 1e5
    delta, _ = oracle_quadratic_min(y, W, lam, mats, seed=4)
    rel = np.linalg.norm(lam * delta - direction) / np.linalg.norm(direction)
    assert rel < 1e-2


def test_oracle_respects_side_condition():
    rng = np.random.default_rng(14)
    X, y, mats = random_instance(rng, n=50)
    delta, _ = oracle_quadratic_min(y, np.eye(50), 0.3, mats, seed=5)
    assert np.max(np.abs(affine_basis(mats.knots) @ delta)) < 1e-10


def test_literal_loocv_guard():
    rng = np.random.default_rng(15)
    X, y, mats = random_instance(rng, n=40)
    with pytest.raises(ValueError):
        oracle_literal_loocv(y, np.ones(40), mats, 1.0, max_n=30)
