"""Discrete-event simulator of NIC-offloaded barrier synchronization."""

from .analytic import ModelParams, builtin_params, fit_constants, predict_latency
from .engine import Engine, EventBudgetExceeded, ProtocolCorruption, Rng, SimulationError
from .harness import ExperimentConfig, Measurement, compare_modes, run_experiment, run_sweep
from .schedules import DS, GB, PE, AlgorithmKind, build_schedule, num_steps, validate_schedules
from .topology import ConfigError, CostModel, get_preset

__version__ = "0.1.0"

__all__ = [
    "AlgorithmKind", "ConfigError", "CostModel", "DS", "Engine", "EventBudgetExceeded",
    "ExperimentConfig", "GB", "Measurement", "ModelParams", "PE", "ProtocolCorruption", "Rng",
    "SimulationError", "build_schedule", "builtin_params", "compare_modes", "fit_constants",
    "get_preset", "num_steps", "predict_latency", "run_experiment", "run_sweep", "validate_schedules",
]
