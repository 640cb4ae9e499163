"""Experiment orchestration: configs, seeded runs, aggregation, comparison and search output."""

from .config import ExperimentConfig, GovernanceSection, SearchSection, load_config, parse_config
from .run import (
    AggregateCurve,
    RunSummary,
    aggregate_seeds,
    compare_runs,
    emit_plot_data,
    read_aggregate,
    run_experiment,
)
from .search import KernelHooks, KernelTrainer, run_search

__all__ = [
    "AggregateCurve", "ExperimentConfig", "GovernanceSection", "KernelHooks", "KernelTrainer",
    "RunSummary", "SearchSection", "aggregate_seeds", "compare_runs", "emit_plot_data",
    "load_config", "parse_config", "read_aggregate", "run_experiment", "run_search",
]
