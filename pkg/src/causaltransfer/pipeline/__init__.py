"""Experiment configuration, persistence, runners and the command line."""

from .acceptance import CheckResult, evaluate
from .config import CONFIG_SCHEMA, Experiment, ExperimentConfig, TrainSettings, config_from_dict, load_config
from .results import COLUMNS, ResultTable, load_curves, load_table, save_curves, save_table
from .runners import (
    RUNNERS,
    efficiency_summary,
    run_bundling,
    run_correlation,
    run_efficiency,
    run_experiment,
    run_symmetry,
    run_transfer,
    run_verify_bounds,
    stage,
)
from .store import Workspace
from .workers import run_jobs

__all__ = [
    "CONFIG_SCHEMA", "COLUMNS", "RUNNERS", "CheckResult", "Experiment", "ExperimentConfig", "ResultTable",
    "TrainSettings", "Workspace", "config_from_dict", "efficiency_summary", "evaluate", "load_config",
    "load_curves", "load_table", "run_bundling", "run_correlation", "run_efficiency", "run_experiment",
    "run_jobs", "run_symmetry", "run_transfer", "run_verify_bounds", "save_curves", "save_table", "stage",
]
