"""Hypothesis tests for the parametric and varying-coefficient parts.

All statistics are computed by small "engines" that accept a matrix of
responses (one column per sample), so the observed statistic and its wild
bootstrap replicates share one code path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla
from scipy import stats

from .dataset import Dataset
from .exceptions import (
    BootstrapFailureError,
    CollinearCovariatesError,
    DegenerateCovarianceError,
    InvalidHypothesisError,
)
from .linalg import COND_LIMIT, normal_condition
from .profile import FitConfig, ProfileFit, build_smoother, fit_pipeline

GOLDEN_LOW = -(math.sqrt(5.0) - 1.0) / 2.0
GOLDEN_HIGH = (math.sqrt(5.0) + 1.0) / 2.0
P_LOW = (math.sqrt(5.0) + 1.0) / (2.0 * math.sqrt(5.0))


@dataclass(frozen=True)
class LinearHypothesis:
    """``H0: A Theta = target`` with ``A`` of full row rank."""

    A: np.ndarray
    target: np.ndarray | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        l, p = A.shape
        target = np.zeros(l) if self.target is None else np.atleast_1d(np.asarray(self.target, dtype=float))
        if target.shape != (l,):
            raise InvalidHypothesisError(f"target has shape {target.shape}, expected ({l},)")
        if not np.all(np.isfinite(A)) or not np.all(np.isfinite(target)):
            raise InvalidHypothesisError("hypothesis contains non-finite entries")
        if l > p:
            raise InvalidHypothesisError(f"A has more rows ({l}) than columns ({p})")
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise InvalidHypothesisError("A is not of full row rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "target", target)

    @property
    def l(self) -> int:
        return self.A.shape[0]

    def check_width(self, p):
        if self.A.shape[1] != p:
            raise InvalidHypothesisError(f"A has {self.A.shape[1]} columns but Theta has {p} entries")


@dataclass
class TestResult:
    test: str
    statistic: float
    df: int
    scaled_statistic: float | None = None
    rho_n: float | None = None
    omega_hat: np.ndarray | None = None
    noncentrality: float | None = None
    p_value_asymptotic: float | None = None
    p_value_bootstrap: float | None = None
    critical_value: float | None = None
    rss0: float | None = None
    rss1: float | None = None
    B: int | None = None
    seed: int | None = None
    bootstrap_failures: int = 0

    def to_json_dict(self) -> dict:
        return {
            "test": self.test,
            "statistic": self.statistic,
            "scaled_statistic": self.scaled_statistic,
            "rho_n": self.rho_n,
            "df": self.df,
            "p_asymptotic": self.p_value_asymptotic,
            "p_bootstrap": self.p_value_bootstrap,
            "B": self.B,
            "seed": self.seed,
            "critical_value": self.critical_value,
        }


@dataclass(frozen=True)
class BootstrapConfig:
    """Wild bootstrap settings.

    ``residual_scaling="leverage"`` divides each unrestricted residual by
    ``sqrt((R R')_ii)``, where ``R`` maps Y to those residuals, before the
    multipliers are applied; ``"none"`` uses the raw residuals.
    """

    B: int = 500
    alpha_level: float = 0.05
    seed: int = 0
    residual_scaling: str = "leverage"

    def __post_init__(self):
        if int(self.B) != self.B or self.B < 1:
            raise ValueError("B must be a positive integer")
        if self.residual_scaling not in ("leverage", "none"):
            raise ValueError("residual_scaling must be 'leverage' or 'none'")
        if not 0.0 < self.alpha_level < 1.0:
            raise ValueError("alpha_level must lie in (0, 1)")


@dataclass(frozen=True)
class BootstrapOutcome:
    statistic: float
    critical_value: float
    p_value: float
    replicates: np.ndarray = field(repr=False)
    failures: int = 0


# --------------------------------------------------------------------------
# parametric hypotheses


class _ParametricEngine:
    """Profile ratio and Wald statistics for a fixed design and smoother."""

    def __init__(self, fit: ProfileFit, hyp: LinearHypothesis):
        hyp.check_width(fit.p)
        self.fit, self.hyp = fit, hyp
        self.n = fit.n
        Zt = fit.Z_tilde
        self.G = Zt.T @ Zt
        cond = normal_condition(Zt)
        if not cond <= COND_LIMIT:
            raise CollinearCovariatesError(f"Zt'Zt is singular (condition {cond:.3g})", condition=cond)
        self.G_lu = sla.lu_factor(self.G)
        A = hyp.A
        self.GiAt = sla.lu_solve(self.G_lu, A.T)                       # G^{-1} A'
        self.AGiAt = A @ self.GiAt
        if not np.linalg.cond(self.AGiAt) <= COND_LIMIT:
            raise InvalidHypothesisError("A (Zt'Zt)^{-1} A' is singular")
        self.AGiAt_lu = sla.lu_factor(self.AGiAt)
        self.IS = np.eye(self.n) - fit.S
        # pieces of the calibration term of the sandwich, linear in beta
        self.C = None
        if fit.e_hat is not None and fit.B_hat is not None:
            Sig_lu = sla.lu_factor(fit.Sigma_hat)
            self.C = A @ sla.lu_solve(Sig_lu, fit.B_hat.T)            # (l, n): A Sigma^{-1} B_i

    def estimates(self, Y):
        """Theta_hat and RSS_1 for each column of ``Y`` (n, m)."""
        Yt = self.IS @ Y
        theta = sla.lu_solve(self.G_lu, self.fit.Z_tilde.T @ Yt)       # (p, m)
        resid = Yt - self.fit.Z_tilde @ theta
        return theta, np.einsum("im,im->m", resid, resid)

    def quad(self, theta, target):
        d = self.hyp.A @ theta - target[:, None]
        return d, np.einsum("lm,lm->m", d, sla.lu_solve(self.AGiAt_lu, d))

    def ratio(self, Y, target):
        theta, rss1 = self.estimates(Y)
        _, q = self.quad(theta, target)
        return 0.5 * self.n * q / rss1

    def cov_A(self, theta, rss1):
        """``A Var(Theta_hat) A'`` per column, shape (m, l, l)."""
        sigma2 = rss1 / self.n
        out = sigma2[:, None, None] * self.AGiAt[None]
        if self.C is not None:
            s = self.fit.e_hat @ theta[: self.fit.p1]                  # (n, m)
            out = out + np.einsum("li,im,ki->mlk", self.C, s * s, self.C) / self.n**2
        return out

    def wald(self, Y, target):
        theta, rss1 = self.estimates(Y)
        d = self.hyp.A @ theta - target[:, None]
        V = self.cov_A(theta, rss1)
        sol = np.linalg.solve(V, d.T[..., None])[..., 0]
        return np.einsum("ml,ml->m", d.T, sol)


def restricted_fit(fit: ProfileFit, hyp: LinearHypothesis):
    """Constrained profile estimate under ``A Theta = target``.

    Returns ``(theta0, rss0)`` with ``rss0 = ||(I - S)(Y - Z_hat theta0)||^2``.
    """
    eng = _ParametricEngine(fit, hyp)
    d = hyp.A @ fit.theta_hat - hyp.target
    theta0 = fit.theta_hat - eng.GiAt @ sla.lu_solve(eng.AGiAt_lu, d)
    r = fit.Y - fit.Z_hat @ theta0
    e = r - fit.S @ r
    return theta0, float(e @ e)


def _rho_and_omega(fit: ProfileFit, hyp: LinearHypothesis, sigma2):
    A = hyp.A
    Sig_lu = sla.lu_factor(fit.Sigma_hat)
    left = sigma2 * A @ sla.lu_solve(Sig_lu, A.T)            # sigma^2 A Sigma^{-1} A'
    right = A @ fit.Sigma1_hat @ A.T                         # A Sigma_1 A'
    omega = sla.eigh(0.5 * (right + right.T), 0.5 * (left + left.T), eigvals_only=True)
    rho = hyp.l / float(np.trace(np.linalg.solve(left, right)))
    return rho, omega, left


def profile_ratio_test(fit: ProfileFit, hyp: LinearHypothesis, sigma2: float | None = None) -> TestResult:
    """Profile least-squares ratio test ``T_n = (n/2)(RSS_0 - RSS_1)/RSS_1``.

    ``2 rho_n T_n`` is referred to a chi-square with ``l`` degrees of
    freedom; ``rho_n`` corrects for the variance added by calibration.
    """
    sigma2 = fit.sigma2_hat if sigma2 is None else float(sigma2)
    _, rss0 = restricted_fit(fit, hyp)
    rss1 = float(fit.residuals @ fit.residuals)
    T = 0.5 * fit.n * (rss0 - rss1) / rss1
    rho, omega, left = _rho_and_omega(fit, hyp, sigma2)
    scaled = 2.0 * rho * T
    d = hyp.A @ fit.theta_hat - hyp.target
    lam = rho * fit.n * float(d @ np.linalg.solve(left, d))
    return TestResult(
        test="ratio", statistic=T, df=hyp.l, scaled_statistic=scaled, rho_n=rho, omega_hat=omega,
        noncentrality=lam, p_value_asymptotic=float(stats.chi2.sf(scaled, hyp.l)), rss0=rss0, rss1=rss1,
    )


def wald_test(fit: ProfileFit, hyp: LinearHypothesis, variant: str = "sandwich") -> TestResult:
    """Wald statistic ``(A Theta - c)' (A V A')^{-1} (A Theta - c)``.

    ``variant="sandwich"`` uses the calibration-aware covariance of
    Theta_hat; ``variant="h"`` uses ``Sigma^{-1}(sigma2 + beta' Sigma_e beta) / n``.
    """
    hyp.check_width(fit.p)
    d = hyp.A @ fit.theta_hat - hyp.target
    if variant == "sandwich":
        V = fit.cov_theta
    elif variant == "h":
        extra = 0.0
        if fit.Sigma_e_hat is not None:
            extra = float(fit.beta_hat @ fit.Sigma_e_hat @ fit.beta_hat)
        V = np.linalg.solve(fit.Sigma_hat, np.eye(fit.p)) * (fit.sigma2_hat + extra) / fit.n
    else:
        raise ValueError(f"unknown Wald variant {variant!r}")
    AVA = hyp.A @ V @ hyp.A.T
    if not np.linalg.cond(AVA) <= COND_LIMIT:
        raise DegenerateCovarianceError("A Var(Theta_hat) A' is singular")
    W = float(d @ np.linalg.solve(AVA, d))
    return TestResult(test="wald" if variant == "sandwich" else "wald_h", statistic=W, df=hyp.l,
                      scaled_statistic=W, p_value_asymptotic=float(stats.chi2.sf(W, hyp.l)))


# --------------------------------------------------------------------------
# varying-coefficient homogeneity


def _residual_operator(S, Z):
    """``(I - P) (I - S)`` where ``P`` projects on the columns of ``(I - S) Z``."""
    n = S.shape[0]
    IS = np.eye(n) - S
    Zt = IS @ Z
    if Zt.shape[1] == 0:
        return IS
    cond = normal_condition(Zt)
    if not cond <= COND_LIMIT:
        raise CollinearCovariatesError(f"null-model design is collinear (condition {cond:.3g})", condition=cond)
    Q, _ = np.linalg.qr(Zt)
    return IS - Q @ (Q.T @ IS)


class _GlrEngine:
    def __init__(self, fit: ProfileFit, const_idx, weights):
        q = fit.X.shape[1]
        const_idx = sorted({int(j) for j in const_idx})
        if not const_idx or const_idx[0] < 0 or const_idx[-1] >= q:
            raise InvalidHypothesisError(f"constant-coefficient indices must be a nonempty subset of 0..{q - 1}")
        n = fit.n
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != (n,) or np.any(w < 0) or not math.isclose(w.sum(), 1.0, rel_tol=1e-9):
            raise ValueError("weights must be non-negative and sum to one")
        self.w = w
        self.R1 = _residual_operator(fit.S, fit.Z_hat)
        varying = [j for j in range(q) if j not in const_idx]
        Z0 = np.concatenate([fit.Z_hat, fit.X[:, const_idx]], axis=1)
        if varying:
            S0 = build_smoother(fit.X[:, varying], fit.U, fit.h, fit.kernel)
        else:
            S0 = np.zeros((n, n))
        self.R0 = _residual_operator(S0, Z0)

    def rss(self, Y):
        e0, e1 = self.R0 @ Y, self.R1 @ Y
        return self.w @ (e0 * e0), self.w @ (e1 * e1)

    def statistic(self, Y):
        r0, r1 = self.rss(Y)
        return np.maximum((r0 - r1) / r1, 0.0)


def glr_test(dataset: Dataset, cfg: FitConfig, null_spec, weights=None, *,
             fit: ProfileFit | None = None) -> TestResult:
    """Generalised likelihood ratio statistic for constancy of some coefficients.

    ``null_spec`` lists the (0-based) indices of X whose coefficients are
    constant under H0. With every index listed the null fit is ordinary
    least squares on ``(Z_hat, X)``; otherwise the constant coefficients
    join Theta in a profile fit and the rest stay varying. Only bootstrap
    calibration is provided (see :func:`wild_bootstrap`).
    """
    fit = fit_pipeline(dataset, cfg) if fit is None else fit
    eng = _GlrEngine(fit, null_spec, weights)
    r0, r1 = eng.rss(fit.Y)
    T = max((r0 - r1) / r1, 0.0)
    return TestResult(test="glr", statistic=float(T), df=len(set(null_spec)), rss0=float(r0), rss1=float(r1))


# --------------------------------------------------------------------------
# wild bootstrap


def draw_tau(rng: np.random.Generator) -> float:
    """One golden-section two-point multiplier (mean 0, variance 1, third moment 1)."""
    return GOLDEN_LOW if rng.random() < P_LOW else GOLDEN_HIGH


def draw_taus(rng: np.random.Generator, size) -> np.ndarray:
    return np.where(rng.random(size) < P_LOW, GOLDEN_LOW, GOLDEN_HIGH)


def bootstrap_multipliers(n, boot: BootstrapConfig) -> np.ndarray:
    """(n, B) multipliers; replicate ``b`` draws from its own stream seeded by ``(seed, b)``."""
    return np.column_stack([draw_taus(np.random.default_rng([boot.seed, b]), n) for b in range(boot.B)])


def _summarise(stat, reps, boot: BootstrapConfig):
    ok = np.isfinite(reps)
    failures = int((~ok).sum())
    if failures > 0.05 * reps.size:
        raise BootstrapFailureError(f"{failures} of {reps.size} bootstrap replicates failed")
    reps = reps[ok]
    crit = float(np.quantile(reps, 1.0 - boot.alpha_level))
    p = (1.0 + float(np.sum(reps >= stat))) / (reps.size + 1.0)
    return BootstrapOutcome(statistic=float(stat), critical_value=crit, p_value=p, replicates=reps,
                            failures=failures)


def _scaled(resid, R, how):
    if how == "none":
        return resid
    lev = np.sqrt(np.einsum("ij,ij->i", R, R))
    return np.divide(resid, lev, out=np.zeros_like(resid), where=lev > 1e-12)


def wild_bootstrap(test_kind: str, dataset: Dataset | None, cfg: FitConfig | None, hyp_or_null,
                   boot: BootstrapConfig = BootstrapConfig(), *, fit: ProfileFit | None = None,
                   weights=None) -> BootstrapOutcome:
    """Wild bootstrap critical value and p-value.

    The design (calibrated covariates, X, U) and the bandwidth are held
    fixed. Residuals come from the unrestricted fit and are multiplied by
    golden-section weights (after the optional leverage rescaling of
    :class:`BootstrapConfig`).

    * ``"ratio"`` / ``"wald"``: ``Y* = Z_hat Theta_hat + alpha_hat(U)'X + eps*``;
      each replicate is tested against its own bootstrap-world value
      ``A Theta_hat`` so the replicates mimic the null distribution.
    * ``"glr"``: ``Y*`` is built from the null (constant-coefficient) fit
      plus the same multiplied unrestricted residuals.

    ``hyp_or_null`` is a :class:`LinearHypothesis` or, for ``"glr"``, the
    list of constant-coefficient indices.
    """
    if fit is None:
        fit = fit_pipeline(dataset, cfg)
    taus = bootstrap_multipliers(fit.n, boot)
    if test_kind in ("ratio", "wald"):
        eng = _ParametricEngine(fit, hyp_or_null)
        y0 = fit.Y[:, None]
        fitted = fit.Y - fit.residuals
        Q, _ = np.linalg.qr(fit.Z_tilde)
        R1 = eng.IS - Q @ (Q.T @ eng.IS)
        eps = _scaled(fit.residuals, R1, boot.residual_scaling)
        Ystar = fitted[:, None] + taus * eps[:, None]
        star_target = hyp_or_null.A @ fit.theta_hat
        with np.errstate(all="ignore"):
            if test_kind == "ratio":
                stat = eng.ratio(y0, hyp_or_null.target)[0]
                reps = eng.ratio(Ystar, star_target)
            else:
                stat = eng.wald(y0, hyp_or_null.target)[0]
                reps = eng.wald(Ystar, star_target)
    elif test_kind == "glr":
        eng = _GlrEngine(fit, hyp_or_null, weights)
        eps = _scaled(eng.R1 @ fit.Y, eng.R1, boot.residual_scaling)
        null_fitted = fit.Y - eng.R0 @ fit.Y
        Ystar = null_fitted[:, None] + taus * eps[:, None]
        with np.errstate(all="ignore"):
            stat = eng.statistic(fit.Y[:, None])[0]
            reps = eng.statistic(Ystar)
    else:
        raise ValueError(f"unknown test kind {test_kind!r}")
    return _summarise(stat, reps, boot)


def run_test(test_kind: str, fit: ProfileFit, hyp_or_null=None, boot: BootstrapConfig | None = None,
             weights=None) -> TestResult:
    """Run one test on a finished fit, optionally adding bootstrap calibration."""
    if test_kind == "ratio":
        res = profile_ratio_test(fit, hyp_or_null)
    elif test_kind == "wald":
        res = wald_test(fit, hyp_or_null)
    elif test_kind == "glr":
        res = glr_test(None, None, hyp_or_null, weights, fit=fit)
    else:
        raise ValueError(f"unknown test kind {test_kind!r}")
    if boot is not None:
        out = wild_bootstrap(test_kind, None, None, hyp_or_null, boot, fit=fit, weights=weights)
        res.p_value_bootstrap = out.p_value
        res.critical_value = out.critical_value
        res.B = boot.B
        res.seed = boot.seed
        res.bootstrap_failures = out.failures
    return res
