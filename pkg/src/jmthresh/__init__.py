"""Bayesian joint models of longitudinal risk factors and survival with
threshold-gated trajectory features."""
from __future__ import annotations

__version__ = "0.1.0"

from .model import ConfigError, Dataset, FactorSpec, Hyper, ModelSpec, prepare_spec
from .sampler import SampleStore, SamplerConfig, sample
from .simulator import GroundTruth, make_benchmark_scenarios, scenario, simulate_dataset
from .state import ParameterState
from .summaries import diagnostics, summarize, threshold_difference

__all__ = [
    "ConfigError", "Dataset", "FactorSpec", "GroundTruth", "Hyper", "ModelSpec",
    "ParameterState", "SampleStore", "SamplerConfig", "__version__", "diagnostics",
    "make_benchmark_scenarios", "prepare_spec", "sample", "scenario", "simulate_dataset",
    "summarize", "threshold_difference",
]
