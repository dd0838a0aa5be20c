"""Profile least-squares fitting of the varying-coefficient partially linear model.

The model is ``Y = Theta' Z + alpha(U)' X + eps`` with ``Z = (xi, W)``.
``alpha`` is profiled out with a local linear smoother ``S`` (one row per
observation), after which ``Theta`` is the least-squares coefficient of
``(I - S) Y`` on ``(I - S) Z_hat``.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg as sla

from .calibration import CalibratedCovariates, CalibrationConfig, calibrate_all
from .dataset import Dataset
from .exceptions import (
    BandwidthSelectionError,
    CollinearCovariatesError,
    DatasetValidationError,
    SingularDesignError,
    SvcplmError,
)
from .kernels import GAUSSIAN, KernelSpec, check_bandwidth, get_kernel, kernel_eval
from .linalg import COND_LIMIT, WlsProblem, normal_condition, solve_symmetric_batch, solve_wls

logger = logging.getLogger(__name__)

MODES = ("proposed", "naive", "benchmark")

# upper bound on elements of the (chunk, n, n) work arrays
_WORK_ELEMENTS = 4_000_000


# --------------------------------------------------------------------------
# local linear varying-coefficient machinery


def _local_moments(points, X, U, h, K):
    """Kernel weights, scaled offsets and normal matrices ``D_u' W_u D_u``.

    Returns ``w`` and ``t`` of shape (m, n) and ``M`` of shape (m, 2q, 2q),
    where ``t = (U_k - u) / h`` and the design row is ``(X_k', t X_k')``.
    """
    t = (U[None, :] - points[:, None]) / h
    w = kernel_eval(K, U[None, :] - points[:, None], h)
    wt = w * t
    A0 = np.einsum("mk,ka,kb->mab", w, X, X)
    A1 = np.einsum("mk,ka,kb->mab", wt, X, X)
    A2 = np.einsum("mk,ka,kb->mab", wt * t, X, X)
    M = np.block([[A0, A1], [A1, A2]])
    return w, t, M


def _row_chunks(n_rows, n_cols, per_row=1):
    size = max(1, _WORK_ELEMENTS // max(1, n_cols * per_row))
    for start in range(0, n_rows, size):
        yield slice(start, min(n_rows, start + size))


def _prepare(X, U):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X, np.asarray(U, dtype=float).ravel()


def smoother_row(i, X, U, h, K: KernelSpec = GAUSSIAN) -> np.ndarray:
    """Row ``i`` of the smoother: ``(X_i', 0') (D'WD)^{-1} D'W`` at ``u = U_i``."""
    X, U = _prepare(X, U)
    h = check_bandwidth(h)
    return _smoother_rows(np.array([int(i)]), X, U, h, get_kernel(K))[0]


def _smoother_rows(rows, X, U, h, K):
    q = X.shape[1]
    w, t, M = _local_moments(U[rows], X, U, h, K)
    rhs = np.concatenate([X[rows], np.zeros((rows.size, q))], axis=1)
    try:
        z = solve_symmetric_batch(M, rhs, locations=U[rows], what="local varying-coefficient design")
    except SingularDesignError as exc:
        if exc.index is not None:
            exc.index = int(rows[exc.index])
        raise
    z0, z1 = z[:, :q], z[:, q:]
    return w * (z0 @ X.T + t * (z1 @ X.T))


def build_smoother(X, U, h, K: KernelSpec = GAUSSIAN) -> np.ndarray:
    """The n x n local linear varying-coefficient smoother matrix."""
    X, U = _prepare(X, U)
    h = check_bandwidth(h)
    K = get_kernel(K)
    n = U.size
    S = np.empty((n, n))
    for sl in _row_chunks(n, n, 2 * X.shape[1]):
        S[sl] = _smoother_rows(np.arange(sl.start, sl.stop), X, U, h, K)
    return S


def local_coefficients(points, X, U, R, h, K: KernelSpec = GAUSSIAN):
    """Local linear coefficients of response ``R`` at ``points``.

    Returns ``(a, b)``, each of shape (len(points), q): the coefficient
    values and their derivatives (the derivative block is rescaled by 1/h).
    """
    X, U = _prepare(X, U)
    h = check_bandwidth(h)
    K = get_kernel(K)
    points = np.atleast_1d(np.asarray(points, dtype=float))
    R = np.asarray(R, dtype=float)
    q = X.shape[1]
    a = np.empty((points.size, q))
    b = np.empty((points.size, q))
    for sl in _row_chunks(points.size, U.size, 2 * q):
        w, t, M = _local_moments(points[sl], X, U, h, K)
        rhs = np.concatenate([(w * R) @ X, (w * t * R) @ X], axis=1)
        coef = solve_symmetric_batch(M, rhs, locations=points[sl], what="local varying-coefficient design")
        a[sl], b[sl] = coef[:, :q], coef[:, q:] / h
    return a, b


def fit_varying(u, X, U, Y, Z_hat, theta_hat, h, K: KernelSpec = GAUSSIAN):
    """``alpha_hat(u)`` and its derivative from the partial residual ``Y - Z_hat theta``."""
    R = np.asarray(Y, dtype=float) - _as_2d(Z_hat) @ np.asarray(theta_hat, dtype=float)
    a, b = local_coefficients([u], X, U, R, h, K)
    return a[0], b[0]


# --------------------------------------------------------------------------
# parametric part


def _as_2d(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def fit_theta(Z_hat, Y, S) -> np.ndarray:
    """Profile least-squares estimate ``(Zt'Zt)^{-1} Zt'(I - S) Y``, ``Zt = (I - S) Z_hat``."""
    Z_hat = _as_2d(Z_hat)
    Y = np.asarray(Y, dtype=float)
    Zt = Z_hat - S @ Z_hat
    Yt = Y - S @ Y
    try:
        return solve_wls(WlsProblem(Zt, Yt))
    except SingularDesignError as exc:
        raise CollinearCovariatesError(
            f"profiled covariates are collinear (condition {exc.condition:.3g})", condition=exc.condition
        ) from None


def residual_variance(Y, Z_hat, theta_hat, S) -> float:
    """``mean((Y - Z_hat theta - M_hat)^2)`` with ``M_hat = S (Y - Z_hat theta)``."""
    R = np.asarray(Y, dtype=float) - _as_2d(Z_hat) @ np.asarray(theta_hat, dtype=float)
    e = R - S @ R
    return float(e @ e) / e.size


def nw_regression(points, V, R, b, K: KernelSpec = GAUSSIAN) -> np.ndarray:
    """Nadaraya-Watson regression of the rows of ``R`` on ``V`` at ``points``."""
    w = kernel_eval(K, np.asarray(V, dtype=float)[None, :] - np.asarray(points, dtype=float)[:, None], b)
    den = w.sum(axis=1)
    if np.any(~(den > 0)):
        i = int(np.flatnonzero(~(den > 0))[0])
        raise SingularDesignError("no observations within kernel support", location=float(points[i]), index=i)
    return (w @ _as_2d(R)) / den[:, None]


@dataclass(frozen=True)
class CovarianceEstimate:
    """Sandwich covariance of ``Theta_hat`` and its ingredients.

    ``cov`` estimates Var(Theta_hat) (already divided by n); ``Sigma`` is
    ``Zt'Zt / n``; ``G`` the calibration term; ``B`` the rows ``B_hat(V_i)``.
    """

    cov: np.ndarray
    Sigma: np.ndarray
    G: np.ndarray
    B: np.ndarray | None


def theta_covariance(Z_tilde, sigma2, *, beta=None, e_hat=None, V=None, b=None,
                     kernel: KernelSpec = GAUSSIAN) -> CovarianceEstimate:
    """``(1/n) Sigma^{-1} (sigma2 Sigma + G) Sigma^{-1}``.

    ``G = (1/n) sum_i (e_i' beta)^2 B(V_i) B(V_i)'`` where ``B`` is the
    Nadaraya-Watson regression of the rows of ``Z_tilde`` on ``V``. Without
    calibration residuals (benchmark or naive estimation) ``G = 0``.
    """
    Zt = _as_2d(Z_tilde)
    n, p = Zt.shape
    Sigma = Zt.T @ Zt / n
    cond = normal_condition(Zt)
    if not cond <= COND_LIMIT:
        raise CollinearCovariatesError(f"Sigma_hat is singular (condition {cond:.3g})", condition=cond)
    G = np.zeros((p, p))
    B = None
    if e_hat is not None:
        e_hat = _as_2d(e_hat)
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        B = nw_regression(V, V, Zt, b, kernel)
        s = e_hat @ beta[: e_hat.shape[1]]
        G = (B * (s * s)[:, None]).T @ B / n
    lu = sla.lu_factor(Sigma)
    left = sla.lu_solve(lu, sigma2 * Sigma + G)
    cov = sla.lu_solve(lu, left.T).T / n
    return CovarianceEstimate(cov=0.5 * (cov + cov.T), Sigma=Sigma, G=G, B=B)


# --------------------------------------------------------------------------
# cross-validation


def _loo_predictions(X, U, Y, Z_list, h, K):
    """Exact leave-one-out predictions of ``Y`` for each design in ``Z_list``.

    For every i the smoother, the profile estimate and the local fit at
    ``U_i`` are recomputed on the other n-1 rows. The smoother is shared by
    all designs. Returns an array of shape (len(Z_list), n).
    """
    X, U = _prepare(X, U)
    Y = np.asarray(Y, dtype=float)
    n, q = X.shape
    Zs = [_as_2d(Z) for Z in Z_list]
    R = np.concatenate(Zs + [Y[:, None]], axis=1)
    offsets = np.cumsum([0] + [Z.shape[1] for Z in Zs])

    w, t, M = _local_moments(U, X, U, h, K)
    XX = X[:, :, None] * X[:, None, :]
    rhs = np.concatenate([X, np.zeros((n, q))], axis=1)
    preds = np.empty((len(Zs), n))
    for sl in _row_chunks(n, n * n):
        I = np.arange(sl.start, sl.stop)
        c = I.size
        wji = w[:, I].T                                   # (c, n): weight of left-out i at point j
        tji = t[:, I].T
        blk = XX[I][:, None]                              # (c, 1, q, q)
        d0 = wji[..., None, None] * blk
        d1 = (wji * tji)[..., None, None] * blk
        d2 = (wji * tji * tji)[..., None, None] * blk
        Mi = M[None] - np.concatenate(
            [np.concatenate([d0, d1], axis=-1), np.concatenate([d1, d2], axis=-1)], axis=-2)
        try:
            z = solve_symmetric_batch(Mi, np.broadcast_to(rhs, (c, n, 2 * q)),
                                      locations=np.broadcast_to(U, (c, n)),
                                      what="leave-one-out local design")
        except SingularDesignError as exc:
            exc.index = int(I[0]) if exc.index is None else exc.index
            raise
        S = w[None] * (z[..., :q] @ X.T + t[None] * (z[..., q:] @ X.T))   # (c, n, n)
        S[np.arange(c), :, I] = 0.0
        Rt = R[None] - S @ R
        Rt[np.arange(c), I, :] = 0.0
        Yt = Rt[..., -1]
        for g, Z in enumerate(Zs):
            Zt = Rt[..., offsets[g]:offsets[g + 1]]
            Gm = np.einsum("cka,ckb->cab", Zt, Zt)
            ev = np.linalg.eigvalsh(Gm)
            with np.errstate(divide="ignore", invalid="ignore"):
                bad = ~(ev[:, -1] / ev[:, 0] <= COND_LIMIT) | ~(ev[:, 0] > 0)
            if np.any(bad):
                i = int(I[np.flatnonzero(bad)[0]])
                raise CollinearCovariatesError(
                    f"profiled covariates are collinear after leaving out observation {i}", index=i)
            theta = np.linalg.solve(Gm, np.einsum("cka,ck->ca", Zt, Yt)[..., None])[..., 0]
            resid = Y[None] - theta @ Z.T                  # (c, n) partial residuals
            preds[g, I] = np.einsum("ca,ca->c", Z[I], theta) + np.einsum("ck,ck->c", S[np.arange(c), I], resid)
    return preds


def cv_scores(h, dataset: Dataset, Z_list, K: KernelSpec = GAUSSIAN) -> np.ndarray:
    """Leave-one-out CV scores at bandwidth ``h``, one per design in ``Z_list``."""
    h = check_bandwidth(h)
    preds = _loo_predictions(dataset.X, dataset.U, dataset.Y, Z_list, h, get_kernel(K))
    return np.mean((dataset.Y[None] - preds) ** 2, axis=1)


def default_cv_grid(U, points=20) -> np.ndarray:
    """Log-spaced grid over ``[0.02, 1.0] * range(U)``."""
    U = np.asarray(U, dtype=float)
    span = float(U.max() - U.min())
    if not span > 0:
        raise DatasetValidationError("U has no spread; cannot build a bandwidth grid")
    return np.logspace(np.log10(0.02), 0.0, int(points)) * span


def cv_curve(grid, dataset: Dataset, Z_list, K: KernelSpec = GAUSSIAN) -> np.ndarray:
    """CV scores over a grid, shape (len(grid), len(Z_list)); failed bandwidths are ``inf``.

    Collinearity of the profiled design does not depend on the bandwidth in
    a way a grid search can fix, so it propagates instead of being skipped.
    """
    grid = np.asarray(grid, dtype=float).ravel()
    out = np.full((grid.size, len(Z_list)), np.inf)
    for j, h in enumerate(grid):
        try:
            out[j] = cv_scores(h, dataset, Z_list, K)
        except CollinearCovariatesError:
            raise
        except SingularDesignError as exc:
            logger.debug("bandwidth %.4g skipped: %s", h, exc)
    return out


def argmin_bandwidth(grid, scores) -> float:
    """Grid minimiser; ties go to the smaller bandwidth."""
    grid = np.asarray(grid, dtype=float)
    scores = np.asarray(scores, dtype=float)
    ok = np.isfinite(scores)
    if not np.any(ok):
        raise BandwidthSelectionError("cross-validation failed at every candidate bandwidth")
    best = scores[ok].min()
    return float(grid[ok & (scores == best)].min())


# --------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class FitConfig:
    """Settings for :func:`fit_pipeline`.

    ``h="cv"`` selects the coefficient bandwidth by leave-one-out
    cross-validation over ``cv_grid`` (default: ``cv_points`` log-spaced
    values spanning 2% to 100% of the range of U).
    """

    h: float | str = "cv"
    kernel: KernelSpec = GAUSSIAN
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    mode: str = "proposed"
    alpha_grid: np.ndarray | None = None
    cv_grid: np.ndarray | None = None
    cv_points: int = 20

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (isinstance(self.h, str) and self.h == "cv"):
            check_bandwidth(self.h)
        object.__setattr__(self, "kernel", get_kernel(self.kernel))


@dataclass(frozen=True)
class ProfileFit:
    """Result of :func:`fit_pipeline`. Arrays are read-only."""

    mode: str
    h: float
    b: float | None
    theta_hat: np.ndarray
    cov_theta: np.ndarray
    Sigma_hat: np.ndarray
    G_hat: np.ndarray
    B_hat: np.ndarray | None
    Sigma_e_hat: np.ndarray | None
    sigma2_hat: float
    alpha_grid: np.ndarray
    alpha_hat: np.ndarray
    dalpha_hat: np.ndarray
    fitted_varying: np.ndarray
    residuals: np.ndarray
    trace_S: float
    S: np.ndarray
    Y: np.ndarray
    Z_hat: np.ndarray
    Z_tilde: np.ndarray
    X: np.ndarray
    U: np.ndarray
    V: np.ndarray | None
    e_hat: np.ndarray | None
    p1: int
    kernel: KernelSpec = GAUSSIAN
    calibration_kernel: KernelSpec = GAUSSIAN

    def __post_init__(self):
        for name, val in vars(self).items():
            if isinstance(val, np.ndarray):
                val.setflags(write=False)

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def p(self) -> int:
        return self.theta_hat.size

    @property
    def Sigma1_hat(self) -> np.ndarray:
        """Sandwich covariance of ``sqrt(n) (Theta_hat - Theta)``."""
        return self.n * self.cov_theta

    @property
    def se_theta(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_theta))

    @property
    def beta_hat(self) -> np.ndarray:
        return self.theta_hat[: self.p1]

    def alpha_at(self, u):
        """``(alpha_hat(u), derivative)`` at arbitrary points."""
        R = self.Y - self.Z_hat @ self.theta_hat
        return local_coefficients(u, self.X, self.U, R, self.h, self.kernel)

    def to_json_dict(self) -> dict:
        q = self.alpha_hat.shape[1]
        return {
            "mode": self.mode,
            "theta_hat": self.theta_hat.tolist(),
            "se_theta": self.se_theta.tolist(),
            "sigma2_hat": self.sigma2_hat,
            "trace_S": self.trace_S,
            "bandwidths": {"h": self.h, "b": self.b},
            "alpha_grid": {
                "u": self.alpha_grid.tolist(),
                "alpha": [self.alpha_hat[:, j].tolist() for j in range(q)],
                "dalpha": [self.dalpha_hat[:, j].tolist() for j in range(q)],
            },
        }


@contextlib.contextmanager
def _stage(name):
    try:
        yield
    except SvcplmError as exc:
        raise exc.with_stage(name)


def default_alpha_grid(U, kernel: KernelSpec = GAUSSIAN, points=101) -> np.ndarray:
    """Equispaced grid over the range of U, trimmed by 2.5% per edge for compact kernels."""
    lo, hi = float(np.min(U)), float(np.max(U))
    if get_kernel(kernel).compact:
        pad = 0.025 * (hi - lo)
        lo, hi = lo + pad, hi - pad
    return np.linspace(lo, hi, points)


def design_matrix(dataset: Dataset, mode: str, calibrated: CalibratedCovariates | None = None):
    """``Z_hat = (xi-like block, W)`` for the requested estimation mode."""
    if mode == "proposed":
        first = calibrated.xi_hat if dataset.p1 else np.zeros((dataset.n, 0))
    elif mode == "naive":
        first = dataset.eta
    elif mode == "benchmark":
        if dataset.p1 and dataset.xi is None:
            raise DatasetValidationError("benchmark mode needs the true xi columns")
        first = dataset.xi if dataset.p1 else np.zeros((dataset.n, 0))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return np.concatenate([first, dataset.W], axis=1)


def fit_pipeline(dataset: Dataset, cfg: FitConfig = FitConfig(), *,
                 calibrated: CalibratedCovariates | None = None) -> ProfileFit:
    """Calibrate, profile and fit.

    ``calibrated`` may carry a precomputed calibration (it is only used in
    proposed mode). Failures are re-raised with ``.stage`` set to the
    pipeline step that produced them.
    """
    if not isinstance(dataset, Dataset):
        raise DatasetValidationError("fit_pipeline expects a Dataset")
    mode = cfg.mode
    b = None
    if mode == "proposed" and dataset.p1:
        with _stage("calibrate"):
            if calibrated is None:
                calibrated = calibrate_all(dataset.eta, dataset.V, cfg.calibration)
            b = calibrated.bandwidth
    with _stage("validate"):
        Z_hat = design_matrix(dataset, mode, calibrated)

    if isinstance(cfg.h, str):
        grid = cfg.cv_grid if cfg.cv_grid is not None else default_cv_grid(dataset.U, cfg.cv_points)
        try:
            with _stage("select_h"):
                scores = cv_curve(grid, dataset, [Z_hat], cfg.kernel)[:, 0]
                h = argmin_bandwidth(grid, scores)
        except CollinearCovariatesError as exc:
            exc.stage = "fit_theta"
            raise
    else:
        h = float(cfg.h)

    K = cfg.kernel
    with _stage("build_smoother"):
        S = build_smoother(dataset.X, dataset.U, h, K)
    with _stage("fit_theta"):
        theta = fit_theta(Z_hat, dataset.Y, S)
    Zt = Z_hat - S @ Z_hat
    R = dataset.Y - Z_hat @ theta
    M_hat = S @ R
    resid = R - M_hat
    sigma2 = float(resid @ resid) / dataset.n

    e_hat = calibrated.e_hat if (mode == "proposed" and dataset.p1) else None
    with _stage("theta_covariance"):
        cov = theta_covariance(Zt, sigma2, beta=theta[: dataset.p1], e_hat=e_hat, V=dataset.V, b=b,
                               kernel=cfg.calibration.kernel)
    Sigma_e = e_hat.T @ e_hat / dataset.n if e_hat is not None else None

    grid = default_alpha_grid(dataset.U, K) if cfg.alpha_grid is None else np.asarray(cfg.alpha_grid, float)
    with _stage("fit_varying"):
        a, da = local_coefficients(grid, dataset.X, dataset.U, R, h, K)

    return ProfileFit(
        mode=mode, h=h, b=b, theta_hat=theta, cov_theta=cov.cov, Sigma_hat=cov.Sigma, G_hat=cov.G,
        B_hat=cov.B, Sigma_e_hat=Sigma_e, sigma2_hat=sigma2, alpha_grid=grid, alpha_hat=a,
        dalpha_hat=da, fitted_varying=M_hat, residuals=resid, trace_S=float(np.trace(S)), S=S,
        Y=np.array(dataset.Y), Z_hat=Z_hat, Z_tilde=Zt, X=np.array(dataset.X), U=np.array(dataset.U),
        V=None if dataset.V is None else np.array(dataset.V), e_hat=e_hat, p1=dataset.p1, kernel=K,
        calibration_kernel=cfg.calibration.kernel,
    )


def cv_score(h, dataset: Dataset, cfg: FitConfig = FitConfig(), *,
             calibrated: CalibratedCovariates | None = None) -> float:
    """Exact leave-one-out CV score for bandwidth ``h``.

    The calibrated covariates come from the full sample and stay fixed
    while each observation is left out.
    """
    if cfg.mode == "proposed" and dataset.p1 and calibrated is None:
        calibrated = calibrate_all(dataset.eta, dataset.V, cfg.calibration)
    Z_hat = design_matrix(dataset, cfg.mode, calibrated)
    return float(cv_scores(h, dataset, [Z_hat], cfg.kernel)[0])


def select_h(grid, dataset: Dataset, cfg: FitConfig = FitConfig(), *,
             calibrated: CalibratedCovariates | None = None) -> float:
    """Minimise the CV score over ``grid`` (ties towards the smaller bandwidth)."""
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise BandwidthSelectionError("empty bandwidth grid")
    if cfg.mode == "proposed" and dataset.p1 and calibrated is None:
        calibrated = calibrate_all(dataset.eta, dataset.V, cfg.calibration)
    Z_hat = design_matrix(dataset, cfg.mode, calibrated)
    scores = cv_curve(grid, dataset, [Z_hat], cfg.kernel)[:, 0]
    return argmin_bandwidth(grid, scores)


def refit(fit: ProfileFit, Y) -> ProfileFit:
    """Refit on a new response holding the design, smoother and calibration fixed."""
    Y = np.asarray(Y, dtype=float)
    theta = fit_theta(fit.Z_hat, Y, fit.S)
    R = Y - fit.Z_hat @ theta
    M_hat = fit.S @ R
    resid = R - M_hat
    sigma2 = float(resid @ resid) / Y.size
    cov = theta_covariance(fit.Z_tilde, sigma2, beta=theta[: fit.p1], e_hat=fit.e_hat, V=fit.V, b=fit.b,
                           kernel=fit.calibration_kernel)
    a, da = local_coefficients(fit.alpha_grid, fit.X, fit.U, R, fit.h, fit.kernel)
    return replace(fit, theta_hat=theta, cov_theta=cov.cov, G_hat=cov.G, sigma2_hat=sigma2,
                   alpha_hat=a, dalpha_hat=da, fitted_varying=M_hat, residuals=resid, Y=Y)
