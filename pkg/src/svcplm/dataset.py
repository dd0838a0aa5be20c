"""Observed samples and their CSV representation.

CSV layout (header row required)::

    Y, eta_1..eta_p1, V, W_1..W_p2, X_1..X_q, U [, xi_1..xi_p1]

The optional ``xi_*`` columns carry the true covariate and enable the
benchmark estimator.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DatasetValidationError


def _matrix(a, n, name):
    if a is None:
        return np.zeros((n, 0))
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DatasetValidationError(f"{name} must be one- or two-dimensional")
    return a


@dataclass(frozen=True)
class Dataset:
    """One sample ``(Y, eta, V, W, X, U)`` with an optional true ``xi``.

    ``eta`` is n x p1, ``W`` is n x p2, ``X`` is n x q. ``V`` may be omitted
    only when p1 = 0.
    """

    Y: np.ndarray
    eta: np.ndarray | None
    V: np.ndarray | None
    W: np.ndarray | None
    X: np.ndarray
    U: np.ndarray
    xi: np.ndarray | None = None

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        if Y.ndim != 1 or Y.size == 0:
            raise DatasetValidationError("Y must be a non-empty vector")
        n = Y.size
        eta = _matrix(self.eta, n, "eta")
        W = _matrix(self.W, n, "W")
        X = _matrix(self.X, n, "X")
        U = np.array(self.U, dtype=float).ravel()
        V = None if self.V is None else np.array(self.V, dtype=float).ravel()
        xi = None if self.xi is None else _matrix(self.xi, n, "xi")
        blocks = {"eta": eta, "W": W, "X": X, "U": U}
        if V is not None:
            blocks["V"] = V
        if xi is not None:
            blocks["xi"] = xi
        for name, arr in blocks.items():
            if arr.shape[0] != n:
                raise DatasetValidationError(f"{name} has {arr.shape[0]} rows, expected {n}")
        for name, arr in {"Y": Y, **blocks}.items():
            if not np.all(np.isfinite(arr)):
                raise DatasetValidationError(f"{name} contains non-finite entries")
        if eta.shape[1] + W.shape[1] < 1:
            raise DatasetValidationError("need at least one linear covariate (p1 + p2 >= 1)")
        if X.shape[1] < 1:
            raise DatasetValidationError("need at least one varying-coefficient covariate (q >= 1)")
        if eta.shape[1] > 0 and V is None:
            raise DatasetValidationError("V is required when surrogates eta are present")
        if xi is not None and xi.shape[1] != eta.shape[1]:
            raise DatasetValidationError("xi must have the same number of columns as eta")
        for name, arr in (("Y", Y), ("eta", eta), ("V", V), ("W", W), ("X", X), ("U", U), ("xi", xi)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def p1(self) -> int:
        return self.eta.shape[1]

    @property
    def p2(self) -> int:
        return self.W.shape[1]

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def q(self) -> int:
        return self.X.shape[1]

    def with_response(self, Y) -> "Dataset":
        return replace(self, Y=np.asarray(Y, dtype=float))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        pick = lambda a: None if a is None else a[rows]  # noqa: E731
        return Dataset(self.Y[rows], pick(self.eta), pick(self.V), pick(self.W),
                       self.X[rows], self.U[rows], pick(self.xi))


_COLUMN = re.compile(r"^(eta|W|X|xi)_(\d+)$")


def read_csv(path) -> Dataset:
    """Read a dataset, inferring p1, p2 and q from the header.

    Raises
    ------
    DatasetValidationError
        Naming the missing column, or the row and column of a bad entry.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetValidationError("empty CSV file (header row required)") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    groups: dict[str, dict[int, int]] = {"eta": {}, "W": {}, "X": {}, "xi": {}}
    singles: dict[str, int] = {}
    for j, name in enumerate(header):
        m = _COLUMN.match(name)
        if m:
            groups[m.group(1)][int(m.group(2))] = j
        elif name in ("Y", "V", "U"):
            singles[name] = j
        else:
            raise DatasetValidationError(f"unexpected column {name!r}")
    required = ["Y", "U"] + (["V"] if groups["eta"] else [])
    for name in required:
        if name not in singles:
            raise DatasetValidationError(f"missing required column {name!r}")
    for g, cols in groups.items():
        if cols and sorted(cols) != list(range(1, len(cols) + 1)):
            raise DatasetValidationError(f"columns {g}_* must be numbered 1..{len(cols)}")
    if not groups["X"]:
        raise DatasetValidationError("missing required column 'X_1'")
    if not rows:
        raise DatasetValidationError("CSV has a header but no data rows")

    data = np.empty((len(rows), len(header)))
    for i, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise DatasetValidationError(f"row {i}: expected {len(header)} fields, found {len(r)}")
        for j, cell in enumerate(r):
            try:
                val = float(cell)
            except ValueError:
                raise DatasetValidationError(
                    f"row {i}, column {header[j]!r}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(val):
                raise DatasetValidationError(f"row {i}, column {header[j]!r}: non-finite value")
            data[i - 2, j] = val

    def block(g):
        cols = groups[g]
        return data[:, [cols[k] for k in sorted(cols)]] if cols else None

    xi = block("xi")
    if xi is not None and len(groups["xi"]) != len(groups["eta"]):
        raise DatasetValidationError("xi_* columns must match eta_* columns one to one")
    return Dataset(
        Y=data[:, singles["Y"]],
        eta=block("eta"),
        V=data[:, singles["V"]] if "V" in singles else None,
        W=block("W"),
        X=block("X"),
        U=data[:, singles["U"]],
        xi=xi,
    )


def write_csv(ds: Dataset, path) -> None:
    cols = [("Y", ds.Y)]
    cols += [(f"eta_{k + 1}", ds.eta[:, k]) for k in range(ds.p1)]
    if ds.V is not None:
        cols.append(("V", ds.V))
    cols += [(f"W_{k + 1}", ds.W[:, k]) for k in range(ds.p2)]
    cols += [(f"X_{k + 1}", ds.X[:, k]) for k in range(ds.q)]
    cols.append(("U", ds.U))
    if ds.xi is not None:
        cols += [(f"xi_{k + 1}", ds.xi[:, k]) for k in range(ds.p1)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c for c, _ in cols])
        for i in range(ds.n):
            w.writerow([repr(float(v[i])) for _, v in cols])
