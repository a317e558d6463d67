"""Configuration, seeded sweeps and the command line interface."""

from .config import DEFAULTS, ExperimentConfig, apply_overrides
from .data import SyntheticData, generate_synthetic_data, load_csv_clients, teacher_params
from .seeding import derive_rng, derive_seed
from .sweep import ResultRecord, SweepUnit, bound_violations, run_sweep, summarize, sweep_points

__all__ = [
    "DEFAULTS",
    "ExperimentConfig",
    "ResultRecord",
    "SweepUnit",
    "SyntheticData",
    "apply_overrides",
    "bound_violations",
    "derive_rng",
    "derive_seed",
    "generate_synthetic_data",
    "load_csv_clients",
    "run_sweep",
    "summarize",
    "sweep_points",
    "teacher_params",
]
