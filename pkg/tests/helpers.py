"""Shared random-instance builders for smoother tests."""
import numpy as np
from scipy.linalg import block_diag

from tcthermal.tps import build_design, knot_grid


def small_knots(nd=5, nt=5):
    d = np.linspace(-8, 8, nd)
    t = np.linspace(-2, 20, nt)
    return np.array([(a, b) for a in d for b in t])


def random_points(rng, n):
    return np.column_stack([rng.uniform(-8, 8, n), rng.uniform(-2, 20, n)])


def smooth_signal(points):
    d, t = points[:, 0], points[:, 1]
    return np.sin(d / 3.0) + 0.1 * t - 0.8 * np.exp(-0.5 * ((d - 0.5) ** 2 + (t - 3) ** 2) / 4)


def random_block_weights(rng, n, max_block=4):
    """Block-diagonal inverse covariance and its covariance, both dense."""
    sizes, total = [], 0
    while total < n:
        s = int(min(rng.integers(1, max_block + 1), n - total))
        sizes.append(s)
        total += s
    covs = []
    for s in sizes:
        M = rng.normal(size=(s, s))
        covs.append(0.05 * M @ M.T + 0.1 * np.eye(s))
    Sigma = block_diag(*covs)
    W = block_diag(*[np.linalg.inv(c) for c in covs])
    return W, Sigma


def random_instance(rng, n=None, knots=None, noise=0.3):
    n = int(rng.integers(40, 81)) if n is None else n
    knots = small_knots() if knots is None else knots
    X = random_points(rng, n)
    y = smooth_signal(X) + noise * rng.normal(size=n)
    return X, y, build_design(X, knots)


def full_knots():
    return knot_grid()
