import numpy as np
import pytest

from svcplm import Dataset, FitConfig, fit_pipeline
from svcplm.exceptions import CollinearCovariatesError, DatasetValidationError, SingularDesignError
from svcplm.kernels import EPANECHNIKOV
from svcplm.profile import (
    argmin_bandwidth,
    build_smoother,
    cv_score,
    default_cv_grid,
    fit_theta,
    local_coefficients,
    refit,
    residual_variance,
    select_h,
    smoother_row,
    theta_covariance,
)

import oracles
from conftest import make_vc_data


def _xu(n, q=2, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, q)), rng.uniform(0, 3, n)


def test_smoother_matches_oracle():
    X, U = _xu(30)
    assert np.allclose(build_smoother(X, U, 0.4), oracles.smoother(X, U, 0.4), atol=1e-8)


def test_smoother_row_consistent_with_matrix():
    X, U = _xu(25, seed=3)
    S = build_smoother(X, U, 0.5)
    assert np.allclose(smoother_row(7, X, U, 0.5), S[7], atol=1e-14)


def test_intercept_only_weights_sum_to_one():
    U = np.random.default_rng(1).uniform(0, 1, 50)
    S = build_smoother(np.ones((50, 1)), U, 0.1)
    assert np.allclose(S.sum(axis=1), 1.0, atol=1e-9)


def test_intercept_column_reproduces_ones():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(50), rng.normal(size=50)])
    U = rng.uniform(0, 3, 50)
    assert np.allclose(build_smoother(X, U, 0.3) @ np.ones(50), 1.0, atol=1e-8)


def test_reproduces_globally_linear_coefficients():
    X, U = _xu(120, seed=4)
    a, b = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    Y = np.sum(X * (a + np.outer(U, b)), axis=1)
    S = build_smoother(X, U, 0.2)
    assert np.allclose(S @ Y, Y, atol=1e-8)
    assert 0 < np.trace(S) < 120


def test_tiny_compact_bandwidth_is_singular():
    X, U = _xu(20, seed=5)
    with pytest.raises(SingularDesignError):
        build_smoother(X, U, 1e-4, EPANECHNIKOV)


def test_local_coefficients_exact_for_linear_alpha():
    X, U = _xu(100, seed=6)
    Y = X[:, 0] * (1 + 2 * U) - X[:, 1] * U
    a, da = local_coefficients(np.array([0.5, 1.5]), X, U, Y, 0.3)
    assert np.allclose(a, [[2.0, -0.5], [4.0, -1.5]], atol=1e-8)
    assert np.allclose(da, [[2.0, -1.0], [2.0, -1.0]], atol=1e-8)


def test_local_coefficients_match_oracle():
    X, U = _xu(60, seed=7)
    R = np.random.default_rng(7).normal(size=60)
    a, _ = local_coefficients(np.array([1.1]), X, U, R, 0.4)
    assert np.allclose(a[0], oracles.local_fit(X, U, R, 1.1, 0.4), atol=1e-10)


def test_alpha_recovery_noiseless():
    rng = np.random.default_rng(8)
    n = 2000
    U = rng.uniform(0, 3, n)
    X = rng.normal(0, 0.9, size=(n, 1))
    alpha = np.exp(-U**2) + np.sin(np.pi * U)
    u = np.linspace(0.5, 2.5, 41)
    h = 0.1
    a, _ = local_coefficients(u, X, U, alpha * X[:, 0], h)
    err = a[:, 0] - (np.exp(-u**2) + np.sin(np.pi * u))
    second = (4 * u**2 - 2) * np.exp(-u**2) - np.pi**2 * np.sin(np.pi * u)
    # leading local linear bias h^2/2 * alpha''
    assert np.max(np.abs(err - 0.5 * h**2 * second)) < 0.01
    assert np.max(np.abs(err)) < 0.5 * h**2 * np.max(np.abs(second)) + 0.005


def test_fit_theta_is_ols_when_smoother_vanishes():
    rng = np.random.default_rng(9)
    Z, Y = rng.normal(size=(40, 3)), rng.normal(size=40)
    assert np.allclose(fit_theta(Z, Y, np.zeros((40, 40))), np.linalg.lstsq(Z, Y, rcond=None)[0], atol=1e-10)


def test_fit_theta_exact_on_noiseless_data():
    X, U = _xu(80, seed=10)
    Z = np.random.default_rng(10).normal(size=(80, 3))
    theta = np.array([0.2, -1.0, 1.0])
    assert np.allclose(fit_theta(Z, Z @ theta, build_smoother(X, U, 0.3)), theta, atol=1e-9)


def test_fit_theta_collinear():
    X, U = _xu(40, seed=11)
    z = np.random.default_rng(11).normal(size=40)
    with pytest.raises(CollinearCovariatesError):
        fit_theta(np.column_stack([z, 2 * z]), z, build_smoother(X, U, 0.3))


def test_residual_variance_homogeneous():
    X, U = _xu(50, seed=12)
    rng = np.random.default_rng(12)
    Z, Y = rng.normal(size=(50, 2)), rng.normal(size=50)
    S = build_smoother(X, U, 0.4)
    th = fit_theta(Z, Y, S)
    assert residual_variance(2 * Y, Z, 2 * th, S) == pytest.approx(4 * residual_variance(Y, Z, th, S), rel=1e-12)


def test_covariance_without_calibration_is_textbook():
    Zt = np.random.default_rng(13).normal(size=(60, 3))
    cov = theta_covariance(Zt, 0.7).cov
    assert np.allclose(cov, 0.7 * np.linalg.inv(Zt.T @ Zt / 60) / 60, atol=1e-10)


def test_cv_score_matches_brute_force_loop():
    ds = make_vc_data(n=40, seed=14)
    for mode in ("benchmark", "naive"):
        cfg = FitConfig(mode=mode)
        Z = np.column_stack([ds.xi if mode == "benchmark" else ds.eta, ds.W])
        assert cv_score(0.5, ds, cfg) == pytest.approx(oracles.loo_cv(ds.X, ds.U, ds.Y, Z, 0.5), abs=1e-10)


def test_cv_near_zero_for_exact_model_class():
    X, U = _xu(60, seed=15)
    W = np.random.default_rng(15).normal(size=(60, 1))
    Y = 0.5 * W[:, 0] + X[:, 0] * (1 + U) + X[:, 1]
    ds = Dataset(Y, None, None, W, X, U)
    assert 0 <= cv_score(0.6, ds, FitConfig(mode="naive")) < 1e-4


def test_bandwidth_selection_rules():
    assert argmin_bandwidth([0.1, 0.2, 0.3], [2.0, 1.0, 1.0]) == 0.2
    ds = make_vc_data(n=60, seed=16)
    cfg = FitConfig(mode="benchmark")
    assert select_h([0.37], ds, cfg) == 0.37
    small, large = np.array([0.2, 0.5]), np.array([0.1, 0.2, 0.3, 0.5, 1.0])
    best = lambda g: min(cv_score(h, ds, cfg) for h in g)  # noqa: E731
    assert best(large) <= best(small)


def test_default_cv_grid_spans_range():
    g = default_cv_grid(np.array([0.0, 3.0]), 20)
    assert g[0] == pytest.approx(0.06) and g[-1] == pytest.approx(3.0) and g.size == 20


@pytest.mark.parametrize("mode", ["proposed", "naive", "benchmark"])
def test_pipeline_outputs(vc_data, mode):
    fit = fit_pipeline(vc_data, FitConfig(mode=mode, cv_points=8))
    assert fit.theta_hat.shape == (3,)
    assert np.allclose(fit.cov_theta, fit.cov_theta.T, atol=1e-12)
    assert np.linalg.eigvalsh(fit.Sigma1_hat).min() >= -1e-10
    assert np.all(np.isfinite(fit.alpha_hat))
    assert (fit.b is not None) == (mode == "proposed")
    d = fit.to_json_dict()
    assert set(d) >= {"theta_hat", "se_theta", "sigma2_hat", "alpha_grid", "trace_S", "mode", "bandwidths"}
    assert set(d["alpha_grid"]) == {"u", "alpha", "dalpha"}


def test_proposed_close_to_benchmark_without_measurement_error():
    rng = np.random.default_rng(17)
    n = 1000
    V, U = rng.uniform(0, 1, n), rng.uniform(0, 3, n)
    W, X = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
    xi = 3 * V - 2 * np.cos(4 * np.pi * V)
    Y = 0.2 * xi - W[:, 0] + W[:, 1] + np.sin(U) * X[:, 0] + X[:, 1] + rng.normal(size=n)
    ds = Dataset(Y, xi, V, W, X, U, xi)
    fits = {m: fit_pipeline(ds, FitConfig(h=0.3, mode=m)) for m in ("proposed", "benchmark")}
    assert np.linalg.norm(fits["proposed"].theta_hat - fits["benchmark"].theta_hat) < 0.05


def test_noiseless_benchmark_sigma2():
    X, U = _xu(80, seed=18)
    rng = np.random.default_rng(18)
    V = rng.uniform(0, 1, 80)
    W = rng.normal(size=(80, 1))
    xi = 3 * V
    Y = 0.4 * xi + W[:, 0] + X[:, 0] * (2 - U)
    fit = fit_pipeline(Dataset(Y, xi, V, W, X, U, xi), FitConfig(h=0.5, mode="benchmark"))
    assert fit.sigma2_hat < 1e-6
    assert np.allclose(fit.theta_hat, [0.4, 1.0], atol=1e-9)


def test_benchmark_requires_xi(vc_data):
    ds = Dataset(vc_data.Y, vc_data.eta, vc_data.V, vc_data.W, vc_data.X, vc_data.U)
    with pytest.raises(DatasetValidationError):
        fit_pipeline(ds, FitConfig(h=0.3, mode="benchmark"))


def test_collinear_w_reports_fit_theta_stage(vc_data):
    W = np.column_stack([vc_data.W[:, 0], vc_data.W[:, 0]])
    ds = Dataset(vc_data.Y, vc_data.eta, vc_data.V, W, vc_data.X, vc_data.U)
    for h in (0.3, "cv"):
        with pytest.raises(CollinearCovariatesError) as info:
            fit_pipeline(ds, FitConfig(h=h, cv_points=4))
        assert info.value.stage == "fit_theta"


def test_refit_matches_fresh_fit(vc_data):
    fit = fit_pipeline(vc_data, FitConfig(h=0.4))
    Y2 = vc_data.Y + 1.0
    again = fit_pipeline(vc_data.with_response(Y2), FitConfig(h=0.4))
    assert np.allclose(refit(fit, Y2).theta_hat, again.theta_hat, atol=1e-12)


def test_fit_arrays_read_only(vc_data):
    fit = fit_pipeline(vc_data, FitConfig(h=0.4))
    with pytest.raises(ValueError):
        fit.theta_hat[0] = 1.0
