"""Offset-free nonlinear MPC with learned disturbance models."""

from .closedloop import ClosedLoop, ClosedLoopLog, Metrics, Scenario, metrics, run
from .scenarios import PRESET_NAMES, build_scenario, load_config, load_preset_config, preset

__version__ = "0.1.0"

__all__ = [
    "ClosedLoop",
    "ClosedLoopLog",
    "Metrics",
    "Scenario",
    "metrics",
    "run",
    "PRESET_NAMES",
    "build_scenario",
    "load_config",
    "load_preset_config",
    "preset",
]
