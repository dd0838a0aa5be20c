"""Weighted least squares and batched small symmetric solves.

Every solve goes through a pivoted factorisation (column-pivoted QR for
single problems, partially pivoted LU for batches); nothing here forms an
explicit inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .exceptions import SingularDesignError

COND_LIMIT = 1e12


@dataclass(frozen=True)
class WlsProblem:
    """``argmin_a sum_i w_i (y_i - d_i' a)^2 + ridge * ||a||^2``."""

    design: np.ndarray
    response: np.ndarray
    weights: np.ndarray | None = None
    ridge: float = 0.0

    def __post_init__(self):
        d = np.atleast_2d(np.asarray(self.design, dtype=float))
        if np.ndim(self.design) == 1:
            d = d.T
        y = np.asarray(self.response, dtype=float)
        n, m = d.shape
        w = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float)
        if y.shape[0] != n or w.shape != (n,):
            raise ValueError(f"inconsistent shapes: design {d.shape}, response {y.shape}, weights {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("weights must be finite and non-negative")
        if not (self.ridge >= 0.0):
            raise ValueError("ridge must be non-negative")
        object.__setattr__(self, "design", d)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "ridge", float(self.ridge))


def auto_ridge(design, weights=None, scale=1e-8) -> float:
    """Opt-in ridge ``scale * trace(D'WD) / m`` for near-singular local fits."""
    d = np.asarray(design, dtype=float)
    w = np.ones(d.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return scale * float(np.einsum("i,ij,ij->", w, d, d)) / d.shape[1]


def normal_condition(design, weights=None) -> float:
    """Condition number of ``D'WD`` (squared condition of ``sqrt(W) D``)."""
    d = np.asarray(design, dtype=float)
    w = np.ones(d.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    s = np.linalg.svd(np.sqrt(w)[:, None] * d, compute_uv=False)
    if s.size < d.shape[1] or s[-1] <= 0.0:
        return np.inf
    return float((s[0] / s[-1]) ** 2)


def solve_wls(p: WlsProblem) -> np.ndarray:
    """Solve a weighted (optionally ridged) least-squares problem.

    Raises
    ------
    SingularDesignError
        If ``ridge == 0`` and the condition number of the weighted normal
        matrix exceeds ``1e12``; the estimate is attached as ``.condition``.
    """
    d, y, w = p.design, p.response, p.weights
    m = d.shape[1]
    sw = np.sqrt(w)
    a = sw[:, None] * d
    rhs = sw * y if y.ndim == 1 else sw[:, None] * y
    if p.ridge == 0.0:
        cond = normal_condition(d, w)
        if not cond <= COND_LIMIT:
            raise SingularDesignError(
                f"weighted design is singular (condition {cond:.3g} > {COND_LIMIT:.0e})", condition=cond
            )
    else:
        a = np.vstack([a, np.sqrt(p.ridge) * np.eye(m)])
        pad = np.zeros((m,) + rhs.shape[1:])
        rhs = np.concatenate([rhs, pad])
    q, r, piv = sla.qr(a, mode="economic", pivoting=True)
    z = sla.solve_triangular(r, q.T @ rhs)
    coef = np.empty_like(z)
    coef[piv] = z
    return coef


def solve_symmetric_batch(M, rhs, *, locations=None, what="local design"):
    """Solve a stack of small symmetric positive semi-definite systems.

    Parameters
    ----------
    M : ndarray, shape (..., m, m)
    rhs : ndarray, shape (..., m) or (..., m, k)
    locations : array_like, optional
        Evaluation point per system, broadcast like ``M[..., 0, 0]``; used
        only to label a failure.

    Raises
    ------
    SingularDesignError
        If any system has condition number above ``1e12``.
    """
    M = np.asarray(M, dtype=float)
    ev = np.linalg.eigvalsh(M)
    lo, hi = ev[..., 0], ev[..., -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lo > 0, hi / np.where(lo > 0, lo, 1.0), np.inf)
    bad = ~(cond <= COND_LIMIT)
    if np.any(bad):
        flat = int(np.flatnonzero(bad.ravel())[0])
        idx = np.unravel_index(flat, bad.shape)
        loc = None
        if locations is not None:
            loc = float(np.broadcast_to(np.asarray(locations, dtype=float), bad.shape)[idx])
        where = f" at {loc:.6g}" if loc is not None else ""
        raise SingularDesignError(
            f"singular {what}{where} (condition {float(cond[idx]):.3g})",
            condition=float(cond[idx]),
            location=loc,
            index=int(idx[-1]) if len(idx) else None,
        )
    vec = rhs.ndim == M.ndim - 1
    out = np.linalg.solve(M, rhs[..., None] if vec else rhs)
    return out[..., 0] if vec else out
