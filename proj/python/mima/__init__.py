"""Micro-macro acceleration for linear slow-fast SDEs."""

import json as _json

from ._core import (
    ConfigError,
    GaussianState,
    LinearSde,
    MatchingInfeasible,
    ParticleEnsemble,
    asymptotic_slow_variance,
    coupled_benchmark,
    diag_benchmark,
    drift_block_diagonalize,
    effective_slowfast_threshold,
    invariant_variance,
    kl_gaussian,
    mm_gaussian_step,
    mm_particle_step,
    parametric_slowfast,
    stability_check,
    variance_extrapolation_threshold,
)
from ._core import _run_experiment

__all__ = [
    "ConfigError",
    "GaussianState",
    "LinearSde",
    "MatchingInfeasible",
    "ParticleEnsemble",
    "asymptotic_slow_variance",
    "coupled_benchmark",
    "diag_benchmark",
    "drift_block_diagonalize",
    "effective_slowfast_threshold",
    "invariant_variance",
    "kl_gaussian",
    "mm_gaussian_step",
    "mm_particle_step",
    "parametric_slowfast",
    "run_experiment",
    "stability_check",
    "variance_extrapolation_threshold",
]


def run_experiment(config):
    """Run an experiment from a config mapping (same keys as the TOML file).

    Returns a dict with "summary", "runs", "metadata" and "tables"; each table
    is a dict with "columns" and "rows".
    """
    return _json.loads(_run_experiment(_json.dumps(config)))
