"""Experiment orchestration and the ``tam`` command line."""

from .experiments import (
    ExperimentConfig,
    contraction_factors,
    make_instance,
    relative_error,
    relative_error_dense,
    run_instance,
    run_sweep,
    runtime_scaling,
)

__all__ = [
    "ExperimentConfig",
    "contraction_factors",
    "make_instance",
    "relative_error",
    "relative_error_dense",
    "run_instance",
    "run_sweep",
    "runtime_scaling",
]
