"""Experiment runner, presets, scaling probe, reports and the ``bench`` CLI."""

from .config import ConfigError, ExperimentConfig, load_config, preset, preset_names
from .probe import complexity_probe
from .report import emit_report, load_report
from .runner import ExperimentReport, SeedResult, run_experiment

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "SeedResult",
    "complexity_probe",
    "emit_report",
    "load_config",
    "load_report",
    "preset",
    "preset_names",
    "run_experiment",
]
