"""Experiment configuration, orchestration and the command-line interface."""

from .config import ConfigError, ExperimentConfig, derive_seed
from .experiment import Cell, SweepResult, paper_cells, run_receiver, sweep, train_bank
from .scenario import IdmParams, demo_pair, follower_trip, synthetic_suite, transmitted

__all__ = [
    "Cell", "ConfigError", "ExperimentConfig", "IdmParams", "SweepResult", "demo_pair",
    "derive_seed", "follower_trip", "paper_cells", "run_receiver", "sweep", "synthetic_suite",
    "train_bank", "transmitted",
]
