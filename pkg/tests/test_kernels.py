import math

import numpy as np
import pytest
from scipy import integrate

from svcplm.exceptions import InvalidBandwidthError
from svcplm.kernels import EPANECHNIKOV, GAUSSIAN, UNIFORM, KernelSpec, kernel_eval, kernel_moments

ALL = [GAUSSIAN, EPANECHNIKOV, UNIFORM]


@pytest.mark.parametrize("k", ALL, ids=lambda k: k.family)
def test_kernel_integrates_to_one(k):
    lo, hi = k.support
    val, _ = integrate.quad(lambda t: float(k(t)), lo, hi)
    assert val == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("k", ALL, ids=lambda k: k.family)
def test_kernel_nonnegative_and_finite(k):
    t = np.linspace(-5, 5, 1001)
    v = k(t)
    assert np.all(np.isfinite(v)) and np.all(v >= 0)


def test_compact_support():
    t = np.array([-1.5, 1.0001, 3.0])
    assert np.all(EPANECHNIKOV(t) == 0) and np.all(UNIFORM(t) == 0)
    assert np.all(GAUSSIAN(t) > 0)


def test_scaled_evaluation_values():
    assert kernel_eval(GAUSSIAN, 0.0, 1.0) == pytest.approx(0.3989423, abs=1e-7)
    assert kernel_eval(EPANECHNIKOV, 1.5, 1.0) == 0.0
    assert kernel_eval(GAUSSIAN, 0.2, 0.1) == pytest.approx(0.539910, abs=1e-6)


def test_vectorised_evaluation_keeps_shape():
    u = np.zeros((3, 4))
    assert kernel_eval(GAUSSIAN, u, 0.5).shape == (3, 4)
    assert isinstance(kernel_eval(GAUSSIAN, 0.3, 0.5), float)


@pytest.mark.parametrize("h", [0.0, -1.0, math.inf, math.nan])
def test_bad_bandwidth(h):
    with pytest.raises(InvalidBandwidthError):
        kernel_eval(GAUSSIAN, 0.0, h)


def test_unknown_family():
    with pytest.raises(ValueError):
        KernelSpec("triweight")


def test_moments():
    assert kernel_moments(GAUSSIAN, 2)[0] == pytest.approx(1.0, abs=1e-10)
    assert kernel_moments(GAUSSIAN, 0)[1] == pytest.approx(1 / (2 * math.sqrt(math.pi)), abs=1e-10)
    assert kernel_moments(EPANECHNIKOV, 0)[1] == pytest.approx(3 / 5, abs=1e-10)
    assert kernel_moments(EPANECHNIKOV, 2)[0] == pytest.approx(1 / 5, abs=1e-10)
    assert kernel_moments(UNIFORM, 3) == (0.0, 0.0)


def test_moment_order_guard():
    with pytest.raises(ValueError):
        kernel_moments(GAUSSIAN, 5, max_order=1)
    with pytest.raises(ValueError):
        kernel_moments(GAUSSIAN, -1)
