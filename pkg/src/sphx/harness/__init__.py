from .config import DEFAULTS, EXPERIMENTS, ConfigError, ExperimentSpec, load, parse_text
from .experiments import (
    CarrierDrift,
    ExperimentResult,
    advection_drift,
    exp_circle,
    exp_gradient,
    exp_poiseuille,
    exp_scaling,
    exp_square,
    loglog_slope,
    run_experiment,
    write_csv,
)

__all__ = [
    "DEFAULTS",
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentSpec",
    "ExperimentResult",
    "CarrierDrift",
    "advection_drift",
    "load",
    "parse_text",
    "exp_circle",
    "exp_square",
    "exp_gradient",
    "exp_poiseuille",
    "exp_scaling",
    "loglog_slope",
    "run_experiment",
    "write_csv",
]
