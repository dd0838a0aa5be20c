import numpy as np
import pytest

from svcplm.calibration import (
    CalibrationConfig,
    calibrate_all,
    calibrate_at,
    calibrate_grid,
    replicate_calibrate,
    rule_of_thumb_b,
)
from svcplm.exceptions import DegenerateSampleError, SingularDesignError
from svcplm.kernels import EPANECHNIKOV
from svcplm.simulation import gen_dataset, get_preset

from oracles import local_poly_intercept


@pytest.mark.parametrize("order", [0, 1, 2, 3])
def test_reproduces_polynomials_up_to_order(order):
    rng = np.random.default_rng(order)
    V = rng.uniform(0, 1, 200)
    coefs = rng.normal(size=order + 1)
    eta = np.polyval(coefs, V)
    cfg = CalibrationConfig(order=order, bandwidth=0.07)
    for v0 in (0.2, 0.5, 0.81):
        assert calibrate_at(v0, V, eta, cfg) == pytest.approx(np.polyval(coefs, v0), abs=1e-9)


def test_linear_surrogate_any_bandwidth():
    V = np.random.default_rng(0).uniform(0, 1, 100)
    for b in (0.01, 0.1, 5.0):
        assert calibrate_at(0.4, V, 2 + 3 * V, CalibrationConfig(bandwidth=b)) == pytest.approx(3.2, abs=1e-9)


def test_matches_loop_oracle():
    rng = np.random.default_rng(3)
    V = rng.uniform(0, 1, 60)
    eta = np.cos(5 * V) + rng.normal(0, 0.3, 60)
    for order in (1, 2):
        cal = calibrate_all(eta, V, CalibrationConfig(order=order, bandwidth=0.12))
        ref = [local_poly_intercept(v, V, eta, 0.12, order) for v in V]
        assert np.allclose(cal.xi_hat[:, 0], ref, atol=1e-10)


def test_noiseless_target_function():
    # interior Gaussian smoothing of a cosine: amplitude shrinks by exp(-(omega b)^2 / 2)
    V = np.linspace(0, 1, 1000)
    xi = 3 * V - 2 * np.cos(4 * np.pi * V)
    b = 0.02
    smoothed = 1.5 - 2 * np.exp(-0.5 * (4 * np.pi * b) ** 2)
    est = calibrate_at(0.5, V, xi, CalibrationConfig(bandwidth=b))
    assert est == pytest.approx(smoothed, abs=1e-4)
    assert abs(est - (-0.5)) < 0.065


def test_isolated_point_with_compact_kernel_is_singular():
    V = np.array([0.0, 0.1, 0.2, 0.9])
    with pytest.raises(SingularDesignError):
        calibrate_at(0.55, V, V, CalibrationConfig(bandwidth=0.05, kernel=EPANECHNIKOV))


def test_too_few_points_for_order():
    V = np.linspace(0, 1, 5)
    with pytest.raises(SingularDesignError):
        calibrate_all(V, V, CalibrationConfig(order=4, bandwidth=1e-3))


def test_calibrate_all_shapes_and_residuals():
    ds, _ = gen_dataset(get_preset("scenario_iii"), 0.0, np.random.default_rng(0))
    cal = calibrate_all(ds.eta, ds.V)
    assert cal.xi_hat.shape == (ds.n, 1)
    assert np.allclose(cal.e_hat, ds.eta - cal.xi_hat)
    assert np.all(np.isfinite(cal.xi_hat))
    assert np.corrcoef(cal.xi_hat[:, 0], ds.xi[:, 0])[0, 1] > 0.9


def test_batching_does_not_change_results():
    rng = np.random.default_rng(9)
    V = rng.uniform(0, 1, 600)
    eta = np.sin(6 * V) + rng.normal(0, 0.5, 600)
    cfg = CalibrationConfig(bandwidth=0.05)
    full = calibrate_all(eta, V, cfg).xi_hat[:, 0]
    single = np.array([calibrate_at(v, V, eta, cfg) for v in V[::50]])
    assert np.array_equal(full[::50], single) or np.allclose(full[::50], single, atol=1e-13)
    assert np.allclose(calibrate_grid(V[:7], V, eta, cfg)[:, 0], full[:7], atol=1e-13)


def test_rule_of_thumb():
    V = np.array([-1.0, 1.0] * 500)
    V = V / np.std(V, ddof=1)
    assert rule_of_thumb_b(V) == pytest.approx(0.1)
    U = np.random.default_rng(0).uniform(0, 1, 100)
    assert rule_of_thumb_b(U) == pytest.approx((1 / np.sqrt(12)) * 100 ** (-1 / 3), rel=0.15)
    with pytest.raises(DegenerateSampleError):
        rule_of_thumb_b(np.ones(10))


def test_replicate_noise_free_tracks_identity():
    V = np.linspace(0, 1, 1000)
    est = replicate_calibrate(V, V, 0.05)
    inner = (V > 0.2) & (V < 0.8)
    assert np.max(np.abs(est[inner] - V[inner])) < 0.05


def test_replicate_constant_signal():
    rng = np.random.default_rng(2)
    n = 2000
    V1 = 1.5 + rng.normal(0, 0.5, n)
    V2 = 1.5 + rng.normal(0, 0.5, n)
    est = replicate_calibrate(V1, V2, 0.3, points=np.array([1.3, 1.5, 1.7]))
    assert np.all(np.abs(est - 1.5) < 0.1)


def test_replicate_outside_support():
    V = np.linspace(0, 1, 20)
    with pytest.raises(SingularDesignError):
        replicate_calibrate(V, V, 0.01, kernel=EPANECHNIKOV, points=np.array([5.0]))
