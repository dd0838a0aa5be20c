"""Calibration of unobserved covariates from surrogates.

The unobserved covariate is ``xi(v) = E(eta | V = v)``; it is recovered by
local polynomial regression of each surrogate column on the scalar
ancillary variable ``V``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateSampleError, SingularDesignError
from .kernels import GAUSSIAN, KernelSpec, check_bandwidth, get_kernel, kernel_eval
from .linalg import solve_symmetric_batch

# evaluation points per batched solve; bounds the (chunk, n, r+1) work array
_CHUNK = 256


@dataclass(frozen=True)
class CalibrationConfig:
    """Local polynomial calibration settings.

    ``bandwidth=None`` means the rule of thumb ``sd(V) * n**(-1/3)`` is
    resolved against the data at fit time.
    """

    order: int = 1
    bandwidth: float | None = None
    kernel: KernelSpec = GAUSSIAN

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 0:
            raise ValueError(f"order must be a non-negative integer, got {self.order!r}")
        if self.bandwidth is not None:
            check_bandwidth(self.bandwidth)
        object.__setattr__(self, "kernel", get_kernel(self.kernel))

    def resolve_bandwidth(self, V) -> float:
        return rule_of_thumb_b(V) if self.bandwidth is None else float(self.bandwidth)


@dataclass(frozen=True)
class CalibratedCovariates:
    xi_hat: np.ndarray
    e_hat: np.ndarray
    order: int
    bandwidth: float
    kernel: KernelSpec = field(default=GAUSSIAN)

    @property
    def p1(self) -> int:
        return self.xi_hat.shape[1]


def rule_of_thumb_b(V) -> float:
    """``sd(V) * n**(-1/3)`` with the n-1 divisor for the standard deviation."""
    V = np.asarray(V, dtype=float).ravel()
    n = V.size
    if n < 2:
        raise DegenerateSampleError("rule-of-thumb bandwidth needs at least two observations")
    sd = float(np.std(V, ddof=1))
    if not sd > 0.0:
        raise DegenerateSampleError("V is constant; rule-of-thumb bandwidth is undefined")
    return sd * n ** (-1.0 / 3.0)


def _local_intercepts(points, V, eta, order, b, kernel):
    """Intercepts of the local order-r fits of every column of ``eta`` at ``points``."""
    t = (V[None, :] - points[:, None]) / b
    w = kernel_eval(kernel, V[None, :] - points[:, None], b)
    # columns ((V - v)/b)^j; same intercept as the unscaled design, better conditioned
    powers = t[..., None] ** np.arange(order + 1)
    M = np.einsum("pk,pka,pkb->pab", w, powers, powers)
    rhs = np.einsum("pk,pka,kc->pac", w, powers, eta)
    coef = solve_symmetric_batch(M, rhs, locations=points, what="local calibration design")
    return coef[:, 0, :]


def _calibrate_points(points, V, eta, cfg: CalibrationConfig, b):
    points = np.asarray(points, dtype=float).ravel()
    out = np.empty((points.size, eta.shape[1]))
    for start in range(0, points.size, _CHUNK):
        sl = slice(start, start + _CHUNK)
        try:
            out[sl] = _local_intercepts(points[sl], V, eta, cfg.order, b, cfg.kernel)
        except SingularDesignError as exc:
            if exc.index is not None:
                exc.index += start
            raise
    return out


def _as_columns(eta):
    eta = np.asarray(eta, dtype=float)
    return eta[:, None] if eta.ndim == 1 else eta


def calibrate_at(v0, V, eta_k, cfg: CalibrationConfig = CalibrationConfig()) -> float:
    """Local polynomial estimate of ``E(eta_k | V = v0)``."""
    V = np.asarray(V, dtype=float).ravel()
    eta_k = np.asarray(eta_k, dtype=float).ravel()
    b = cfg.resolve_bandwidth(V)
    return float(_calibrate_points([v0], V, eta_k[:, None], cfg, b)[0, 0])


def calibrate_grid(grid, V, eta, cfg: CalibrationConfig = CalibrationConfig()) -> np.ndarray:
    """Evaluate the calibration curves on an arbitrary grid (for plotting)."""
    V = np.asarray(V, dtype=float).ravel()
    return _calibrate_points(grid, V, _as_columns(eta), cfg, cfg.resolve_bandwidth(V))


def calibrate_all(eta, V, cfg: CalibrationConfig = CalibrationConfig()) -> CalibratedCovariates:
    """Calibrate every surrogate column at every observed ``V_i``.

    Each evaluation point is an independent local solve, so the result does
    not depend on how the points are batched.
    """
    eta = _as_columns(eta)
    V = np.asarray(V, dtype=float).ravel()
    if eta.shape[0] != V.size:
        raise ValueError(f"eta has {eta.shape[0]} rows but V has {V.size}")
    b = cfg.resolve_bandwidth(V)
    xi_hat = _calibrate_points(V, V, eta, cfg, b)
    return CalibratedCovariates(xi_hat=xi_hat, e_hat=eta - xi_hat, order=int(cfg.order),
                                bandwidth=b, kernel=cfg.kernel)


def replicate_calibrate(V1, V2, h, kernel: KernelSpec = GAUSSIAN, points=None) -> np.ndarray:
    """Two-replicate estimate of ``E(xi | V = v)``.

    With two error-contaminated replicates ``V1 = xi + u1`` and
    ``V2 = xi + u2``, pools both replicates as regressors::

        sum_i V1_i {K_h(V2_i - v) + K_h(V1_i - v)} / sum_i {K_h(V2_i - v) + K_h(V1_i - v)}

    ``points`` defaults to the observed ``V1``.
    """
    V1 = np.asarray(V1, dtype=float).ravel()
    V2 = np.asarray(V2, dtype=float).ravel()
    if V1.size != V2.size or V1.size < 2:
        raise DegenerateSampleError("replicates must have equal length of at least two")
    h = check_bandwidth(h)
    pts = V1 if points is None else np.asarray(points, dtype=float).ravel()
    k2 = kernel_eval(kernel, V2[None, :] - pts[:, None], h)
    k1 = kernel_eval(kernel, V1[None, :] - pts[:, None], h)
    den = (k2 + k1).sum(axis=1)
    zero = ~(den > 0)
    if np.any(zero):
        i = int(np.flatnonzero(zero)[0])
        raise SingularDesignError(f"no replicate within kernel support of v={pts[i]:.6g}",
                                  location=float(pts[i]), index=i)
    return ((k2 + k1) @ V1) / den
