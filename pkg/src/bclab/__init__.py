"""Exclusion chain with a moving Gamma bath: simulation and boundary-condition diagnostics."""

__version__ = "0.1.0"

from .model import ModelParams, ParameterError, derive_params, sample_gibbs
from .dynamics import IntegratorConfig, RandomStreams, Trajectory, resume, run
from .testfn import get_test_function

__all__ = ["ModelParams", "ParameterError", "derive_params", "sample_gibbs", "IntegratorConfig",
           "RandomStreams", "Trajectory", "resume", "run", "get_test_function", "__version__"]
