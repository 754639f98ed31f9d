"""Experiment orchestration: configs, runs, traces, comparisons and the CLI."""

from .compare import ComparisonReport, compare, write_plot_csv
from .config import ConfigError, ExperimentConfig, load_config
from .runner import build_problem, run_experiment
from .trace import HEADER, TraceRecord, read_trace, write_trace

__all__ = [
    "ComparisonReport",
    "ConfigError",
    "ExperimentConfig",
    "HEADER",
    "TraceRecord",
    "build_problem",
    "compare",
    "load_config",
    "read_trace",
    "run_experiment",
    "write_plot_csv",
    "write_trace",
]
