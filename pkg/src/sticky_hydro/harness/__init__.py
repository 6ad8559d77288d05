"""Experiment harness: configuration, runners, reports and the command-line entry point."""

from .config import EXPERIMENTS, ConfigError, ExperimentConfig, parse_config, parse_config_text
from .experiments import CHECKS, run_experiment
from .report import ExperimentReport

__all__ = [
    "CHECKS",
    "EXPERIMENTS",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "parse_config",
    "parse_config_text",
    "run_experiment",
]
