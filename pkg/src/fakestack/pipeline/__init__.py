"""Config-driven experiment pipeline."""

from .cache import cache_predictions, load_predictions, prediction_path
from .config import ExperimentConfig, parse_config, validate_config
from .runner import ExperimentRunner, RunManifest, StageFailure, compare_runs, run_experiment

__all__ = [
    "ExperimentConfig", "ExperimentRunner", "RunManifest", "StageFailure", "cache_predictions",
    "compare_runs", "load_predictions", "parse_config", "prediction_path", "run_experiment", "validate_config",
]
