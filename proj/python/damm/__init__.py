"""Directionality-aware mixture models for learning stable dynamical systems."""

from ._damm import (
    Demonstration,
    DegenerateInputError,
    LpvDsModel,
    Model,
    NumericalError,
    RolloutTrace,
    UsageError,
    benchmark,
    cli,
    dtwd,
    edot,
    learn,
    load_model,
    load_trajectories,
    reproduction_dtwd,
    rmse,
    sphere,
    synthetic_demo,
)

__all__ = [
    "Demonstration",
    "DegenerateInputError",
    "LpvDsModel",
    "Model",
    "NumericalError",
    "RolloutTrace",
    "UsageError",
    "benchmark",
    "cli",
    "dtwd",
    "edot",
    "learn",
    "load_model",
    "load_trajectories",
    "reproduction_dtwd",
    "rmse",
    "sphere",
    "synthetic_demo",
]
