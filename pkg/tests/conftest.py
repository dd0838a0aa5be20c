import numpy as np
import pytest

from svcplm import Dataset, gen_dataset, get_preset


def make_vc_data(n=80, seed=0, noise=0.5, p2=2):
    """Small varying-coefficient sample with one calibrated covariate."""
    rng = np.random.default_rng(seed)
    V = rng.uniform(0, 1, n)
    U = rng.uniform(0, 3, n)
    W = rng.normal(size=(n, p2))
    X = rng.normal(0, 0.9, size=(n, 2))
    xi = 3 * V - 2 * np.cos(4 * np.pi * V)
    eta = xi + rng.normal(0, 1.0, n)
    Y = 0.3 * xi + W @ np.linspace(-1, 1, p2) + np.sin(U) * X[:, 0] + U * X[:, 1] + noise * rng.normal(size=n)
    return Dataset(Y=Y, eta=eta, V=V, W=W, X=X, U=U, xi=xi)


@pytest.fixture
def vc_data():
    return make_vc_data()


@pytest.fixture
def scenario_data():
    ds, truth = gen_dataset(get_preset("scenario_iii"), 0.0, np.random.default_rng(11))
    return ds
