"""Benchmark harness: configs, experiment matrices and reports."""

from .config import (
    CellConfig,
    ExperimentConfig,
    parse_config,
    parse_config_text,
    serialize_config,
)
from .report import report
from .runner import run_matrix

__all__ = [
    "CellConfig",
    "ExperimentConfig",
    "parse_config",
    "parse_config_text",
    "report",
    "run_matrix",
    "serialize_config",
]
