import numpy as np
import pytest

from cbvar.simstudy import A1, A2, Q


def simulate_var(rng, T, A_lags, Q_mat=None, intercept=None, burn=100):
    """Gaussian VAR(p) path with ``y_t = c + sum_l A_l y_{t-l} + Q e_t``."""
    M = A_lags[0].shape[0]
    p = len(A_lags)
    Q_mat = np.eye(M) if Q_mat is None else Q_mat
    c = np.zeros(M) if intercept is None else intercept
    y = np.zeros((T + burn + p, M))
    for t in range(p, len(y)):
        y[t] = c + sum(A_lags[l] @ y[t - 1 - l] for l in range(p)) + Q_mat @ rng.standard_normal(M)
    return y[burn + p:]


@pytest.fixture
def example_var():
    def make(seed, T=200):
        return simulate_var(np.random.default_rng(seed), T, [A1, A2], Q)
    return make


def rel(a, b):
    """Norm-wise relative difference."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)
