import numpy as np
import pytest

from metafors.reservoir import ReservoirSpec, build_reservoir


def small_spec(n_nodes=20, n_inputs=1, seed=0, **kw):
    params = dict(mean_in_degree=3.0, spectral_radius=0.8, input_strength=1.0,
                  bias_strength=0.5, leakage=0.5)
    params.update(kw)
    return ReservoirSpec(n_nodes=n_nodes, n_inputs=n_inputs, seed=seed, **params)


def small_reservoir(n_nodes=20, n_inputs=1, seed=0, **kw):
    return build_reservoir(small_spec(n_nodes, n_inputs, seed, **kw))


def oracle_step(A, B, c, leak, r, u):
    """Scalar-loop reservoir update, independent of the compiled kernels."""
    n = len(r)
    out = [0.0] * n
    for i in range(n):
        acc = c[i]
        for j in range(n):
            acc += A[i][j] * r[j]
        for m in range(len(u)):
            acc += B[i][m] * u[m]
        out[i] = (1.0 - leak) * r[i] + leak * np.tanh(acc)
    return out


def ridge_oracle(R, Y, alpha):
    """``Y R^T (R R^T + alpha n I)^-1`` with a dense general solver; R is (n_feat, n)."""
    n = R.shape[1]
    G = R @ R.T + alpha * n * np.eye(R.shape[0])
    return np.linalg.solve(G, (Y @ R.T).T).T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
