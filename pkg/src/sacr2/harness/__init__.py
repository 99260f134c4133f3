"""Experiment harness: configs, presets, multi-seed suites, plots and the CLI."""

from .config import ConfigError, ExperimentConfig
from .presets import preset, preset_names
from .suite import aggregate, load_summary, rolling_success, run_suite

__all__ = ["ConfigError", "ExperimentConfig", "preset", "preset_names", "aggregate", "load_summary",
           "rolling_success", "run_suite"]
