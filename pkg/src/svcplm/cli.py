"""Command-line front end.

Subcommands: ``fit``, ``cv``, ``test``, ``simulate``, ``calibrate``. Exit
codes: 0 success, 2 bad input, 3 numerical failure, 4 unstable simulation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import secrets
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .calibration import CalibrationConfig, calibrate_all
from .dataset import read_csv
from .exceptions import (
    DatasetValidationError,
    InvalidBandwidthError,
    InvalidHypothesisError,
    SimulationInstabilityError,
    SvcplmError,
)
from .inference import BootstrapConfig, LinearHypothesis, run_test
from .profile import MODES, FitConfig, argmin_bandwidth, cv_curve, default_cv_grid, design_matrix, fit_pipeline
from .simulation import PRESETS, ScenarioSpec, get_preset, run_study

logger = logging.getLogger("svcplm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_UNSTABLE = 0, 2, 3, 4


class InputError(Exception):
    """Bad command-line input detected before any numerics run."""


def _version() -> str:
    try:
        return metadata.version("svcplm")
    except metadata.PackageNotFoundError:
        return "unknown"


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def parse_matrix(text: str) -> np.ndarray:
    """``"1,1,1;0,1,0"`` -> 2 x 3 array."""
    try:
        rows = [[float(x) for x in r.split(",")] for r in text.split(";") if r.strip()]
    except ValueError:
        raise InputError(f"cannot parse --A {text!r}") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise InputError(f"--A rows must be non-empty and of equal length: {text!r}")
    return np.array(rows)


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",") if x.strip()])
    except ValueError:
        raise InputError(f"cannot parse vector {text!r}") from None


def _positive(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return val


def _fit_config(args) -> FitConfig:
    grid = parse_vector(args.cv_grid) if args.cv_grid else None
    if grid is not None and (grid.size == 0 or np.any(~(grid > 0))):
        raise InputError("--cv-grid must list positive bandwidths")
    return FitConfig(h="cv" if args.h is None else args.h, mode=args.mode, cv_grid=grid,
                     calibration=CalibrationConfig(bandwidth=args.b))


def _load(args):
    if not args.input:
        raise InputError("--input is required")
    if not Path(args.input).is_file():
        raise InputError(f"input file not found: {args.input}")
    return read_csv(args.input)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_alpha_curve(fit, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u"] + [f"alpha_{j + 1}" for j in range(fit.alpha_hat.shape[1])])
        for u, row in zip(fit.alpha_grid, fit.alpha_hat):
            w.writerow([repr(float(u))] + [repr(float(v)) for v in row])


def cmd_fit(args) -> int:
    ds = _load(args)
    fit = fit_pipeline(ds, _fit_config(args))
    out = _out_dir(args)
    _dump_json(fit.to_json_dict(), out / "fit.json")
    _write_alpha_curve(fit, out / "alpha_curve.csv")
    print(f"theta_hat = {np.array2string(fit.theta_hat, precision=6)}  h = {fit.h:.6g}")
    return EXIT_OK


def cmd_cv(args) -> int:
    ds = _load(args)
    cfg = _fit_config(args)
    calibrated = calibrate_all(ds.eta, ds.V, cfg.calibration) if (cfg.mode == "proposed" and ds.p1) else None
    grid = cfg.cv_grid if cfg.cv_grid is not None else default_cv_grid(ds.U, cfg.cv_points)
    scores = cv_curve(grid, ds, [design_matrix(ds, cfg.mode, calibrated)], cfg.kernel)[:, 0]
    h = argmin_bandwidth(grid, scores)
    out = _out_dir(args)
    with open(out / "cv_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["h", "cv"])
        for g, s in zip(grid, scores):
            w.writerow([repr(float(g)), repr(float(s))])
    _dump_json({"h": h, "mode": cfg.mode}, out / "cv.json")
    print(f"selected h = {h:.6g}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    ds = _load(args)
    if ds.p1 == 0:
        raise InputError("the input has no eta_* columns to calibrate")
    cal = calibrate_all(ds.eta, ds.V, CalibrationConfig(bandwidth=args.b))
    out = _out_dir(args)
    with open(out / "calibrated.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["V"] + [f"xi_hat_{k + 1}" for k in range(cal.p1)])
        for v, row in zip(ds.V, cal.xi_hat):
            w.writerow([repr(float(v))] + [repr(float(x)) for x in row])
    print(f"calibrated {cal.p1} column(s) with b = {cal.bandwidth:.6g}")
    return EXIT_OK


def _seed(args) -> int:
    return secrets.randbits(32) if args.seed is None else args.seed


def cmd_test(args) -> int:
    ds = _load(args)
    cfg = _fit_config(args)
    if args.test == "glr":
        if not args.constant:
            raise InputError("--test glr needs --constant (0-based X indices with constant coefficients)")
        null = [int(x) for x in parse_vector(args.constant)]
    else:
        if not args.A:
            raise InputError(f"--test {args.test} needs --A")
        A = parse_matrix(args.A)
        target = parse_vector(args.target) if args.target else None
        null = LinearHypothesis(A, target)
        null.check_width(ds.p)
    seed = _seed(args)
    boot = None
    if args.bootstrap:
        boot = BootstrapConfig(B=args.bootstrap, alpha_level=args.level, seed=seed)
    elif args.test == "glr":
        raise InputError("the GLR test is calibrated by bootstrap only; pass --bootstrap B")
    fit = fit_pipeline(ds, cfg)
    res = run_test(args.test, fit, null, boot)
    if boot is None:
        res.seed = seed
    out = _out_dir(args)
    _dump_json(res.to_json_dict(), out / "test.json")
    _dump_json({"seed": seed, "version": _version(), "command": "test", "h": fit.h}, out / "provenance.json")
    print(f"{res.test}: statistic = {res.statistic:.6g}  p_asymptotic = {res.p_value_asymptotic}  "
          f"p_bootstrap = {res.p_value_bootstrap}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.preset and args.config:
        raise InputError("use either --preset or --config, not both")
    if args.config:
        try:
            spec = ScenarioSpec.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"bad scenario config: {exc}") from None
    else:
        try:
            spec = get_preset(args.preset or "scenario_iii")
        except ValueError as exc:
            raise InputError(str(exc)) from None
    changes = {"seed": _seed(args)}
    if args.replicates:
        changes["replicates"] = args.replicates
    if args.bootstrap:
        changes["B"] = args.bootstrap
    if args.level != 0.05:
        changes["level"] = args.level
    if args.h is not None:
        changes["h"] = args.h
    spec = spec.with_(**changes)
    report = run_study(spec, workers=args.threads)
    out = _out_dir(args)
    report.to_csv(out / "report.csv")
    _dump_json({"seed": spec.seed, "version": _version(), "preset": args.preset, "spec": spec.to_dict(),
                "failures": {repr(k): v for k, v in report.failures.items()}}, out / "provenance.json")
    print(f"wrote {len(report.rows)} rows to {out / 'report.csv'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svcplm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=_version())
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="CSV with columns Y, eta_*, V, W_*, X_*, U [, xi_*]")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--mode", choices=MODES, default="proposed")
    common.add_argument("--h", type=_positive, help="coefficient bandwidth (default: cross-validation)")
    common.add_argument("--b", type=_positive, help="calibration bandwidth (default: sd(V) n^-1/3)")
    common.add_argument("--cv-grid", help="comma-separated candidate bandwidths")
    common.add_argument("--seed", type=int)
    common.add_argument("--level", type=float, default=0.05)
    common.add_argument("--threads", type=int, default=1, help="worker processes for simulations")
    common.add_argument("-v", "--verbose", action="store_true")

    for name, fn in (("fit", cmd_fit), ("cv", cmd_cv), ("calibrate", cmd_calibrate)):
        sp = sub.add_parser(name, parents=[common])
        sp.set_defaults(func=fn)

    sp = sub.add_parser("test", parents=[common])
    sp.add_argument("--test", choices=("ratio", "wald", "glr"), default="ratio")
    sp.add_argument("--A", help='hypothesis rows, e.g. "1,1,1" or "1,0,0;0,1,0"')
    sp.add_argument("--target", help="comma-separated right-hand side (default 0)")
    sp.add_argument("--constant", help="GLR null: 0-based X indices with constant coefficients")
    sp.add_argument("--bootstrap", type=int, metavar="B", help="wild bootstrap replicates")
    sp.set_defaults(func=cmd_test)

    sp = sub.add_parser("simulate", parents=[common])
    sp.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    sp.add_argument("--config", help="scenario JSON file")
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--bootstrap", type=int, metavar="B")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if not 0.0 < args.level < 1.0:
        print("error: --level must lie in (0, 1)", file=sys.stderr)
        return EXIT_INPUT
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, DatasetValidationError, InvalidHypothesisError, InvalidBandwidthError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SimulationInstabilityError as exc:
        print(f"simulation unstable: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except SvcplmError as exc:
        stage = exc.stage or "unknown"
        print(f"numerical failure in stage {stage}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
