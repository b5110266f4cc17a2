import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def dense_gp(X, y, Xq, sf2, ell, sn2, prior_mean=None):
    """Textbook GP posterior with a constant mean, solved with numpy only."""
    X = np.asarray(X, float)
    Xq = np.asarray(Xq, float)

    def k(A, B):
        d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)
        return sf2 * np.exp(-d2 / (2 * ell**2))

    mu0 = np.mean(y) if prior_mean is None else prior_mean
    A = k(X, X) + sn2 * np.eye(len(X))
    Ks = k(Xq, X)
    mean = mu0 + Ks @ np.linalg.solve(A, y - mu0)
    var = sf2 - np.einsum("ij,ji->i", Ks, np.linalg.solve(A, Ks.T)) + sn2
    return mean, var
