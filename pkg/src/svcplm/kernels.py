"""Second-order smoothing kernels and their moments."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .exceptions import InvalidBandwidthError, QuadratureError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

FAMILIES = ("gaussian", "epanechnikov", "uniform")


@dataclass(frozen=True)
class KernelSpec:
    """A symmetric probability-density kernel.

    ``family`` is one of ``"gaussian"``, ``"epanechnikov"`` or
    ``"uniform"``. The two compact kernels live on [-1, 1].
    """

    family: str = "gaussian"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")

    @property
    def compact(self) -> bool:
        return self.family != "gaussian"

    @property
    def support(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self.compact else (-math.inf, math.inf)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "gaussian":
            return np.exp(-0.5 * t * t) / _SQRT_2PI
        inside = np.abs(t) <= 1.0
        if self.family == "epanechnikov":
            return np.where(inside, 0.75 * (1.0 - t * t), 0.0)
        return np.where(inside, 0.5, 0.0)


GAUSSIAN = KernelSpec("gaussian")
EPANECHNIKOV = KernelSpec("epanechnikov")
UNIFORM = KernelSpec("uniform")


def get_kernel(kernel) -> KernelSpec:
    if isinstance(kernel, KernelSpec):
        return kernel
    return KernelSpec(str(kernel))


def check_bandwidth(bandwidth) -> float:
    h = float(bandwidth)
    if not (h > 0.0) or not math.isfinite(h):
        raise InvalidBandwidthError(f"bandwidth must be positive and finite, got {bandwidth!r}")
    return h


def kernel_eval(k: KernelSpec, u, bandwidth):
    """Scaled kernel ``K_h(u) = K(u / h) / h``; vectorised over ``u``."""
    h = check_bandwidth(bandwidth)
    out = get_kernel(k)(np.asarray(u, dtype=float) / h) / h
    return out if np.ndim(out) else float(out)


@lru_cache(maxsize=None)
def _moments(family: str, j: int, tol: float) -> tuple[float, float]:
    k = KernelSpec(family)
    if j % 2 == 1:
        # symmetric kernel: odd moments of K and K^2 vanish
        return 0.0, 0.0
    lo, hi = k.support
    out = []
    for power in (1, 2):
        val, err = integrate.quad(lambda t: t**j * float(k(t)) ** power, lo, hi,
                                  epsabs=tol, epsrel=tol, limit=200)
        if not math.isfinite(val) or err > max(10 * tol, 10 * tol * abs(val)):
            raise QuadratureError(
                f"kernel moment j={j} for {family} did not converge (error {err:.2e}, tol {tol:.1e})"
            )
        out.append(val)
    return out[0], out[1]


def kernel_moments(k: KernelSpec, j: int, max_order: int | None = None, tol: float = 1e-10):
    """Return ``(mu_j, nu_j)``, the j-th moments of ``K`` and of ``K**2``.

    Parameters
    ----------
    k : KernelSpec
    j : int
        Non-negative moment index.
    max_order : int, optional
        Configured polynomial order r; when given, ``j`` must not exceed
        ``2 r + 2``.
    tol : float
        Absolute and relative tolerance handed to the adaptive quadrature.
    """
    j = int(j)
    if j < 0:
        raise ValueError("moment index must be non-negative")
    if max_order is not None and j > 2 * int(max_order) + 2:
        raise ValueError(f"moment index {j} exceeds 2r+2 = {2 * int(max_order) + 2}")
    return _moments(get_kernel(k).family, j, float(tol))
