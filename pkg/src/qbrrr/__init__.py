"""Quasi-Bayesian reduced-rank regression with incomplete responses."""

from .errors import (ConvergenceError, DivergenceError, InvalidInputError,
                     NumericalError, QbrrrError, TuningError)
from .model import ObservationSet, RrrProblem, clamp_projection, empirical_risk
from .prior import PriorConfig
from .sampler import PosteriorSummary, SamplerConfig, run_chain, tune_step_size

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DivergenceError", "InvalidInputError", "NumericalError",
    "ObservationSet", "PosteriorSummary", "PriorConfig", "QbrrrError",
    "RrrProblem", "SamplerConfig", "TuningError", "clamp_projection",
    "empirical_risk", "run_chain", "tune_step_size",
]
