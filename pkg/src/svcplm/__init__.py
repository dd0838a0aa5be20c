"""Varying-coefficient partially linear models with calibrated covariates."""

from .calibration import CalibrationConfig, calibrate_all, calibrate_at, replicate_calibrate
from .dataset import Dataset, read_csv, write_csv
from .exceptions import SvcplmError
from .inference import (
    BootstrapConfig,
    LinearHypothesis,
    TestResult,
    glr_test,
    profile_ratio_test,
    restricted_fit,
    run_test,
    wald_test,
    wild_bootstrap,
)
from .kernels import EPANECHNIKOV, GAUSSIAN, UNIFORM, KernelSpec
from .profile import FitConfig, ProfileFit, build_smoother, fit_pipeline, select_h
from .simulation import ScenarioSpec, gen_dataset, get_preset, run_estimation_study, run_power_study

__version__ = "0.1.0"

__all__ = [
    "BootstrapConfig", "CalibrationConfig", "Dataset", "EPANECHNIKOV", "FitConfig", "GAUSSIAN",
    "KernelSpec", "LinearHypothesis", "ProfileFit", "ScenarioSpec", "SvcplmError", "TestResult", "UNIFORM",
    "build_smoother", "calibrate_all", "calibrate_at", "fit_pipeline", "gen_dataset", "get_preset",
    "glr_test", "profile_ratio_test", "read_csv", "replicate_calibrate", "restricted_fit",
    "run_estimation_study", "run_power_study", "run_test", "select_h", "wald_test", "wild_bootstrap",
    "write_csv",
]
