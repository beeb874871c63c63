"""Quantile functional regression with quantlet bases."""
from .errors import (ConfigError, DegenerateSampleError, MissingArtifactError, OutOfRangeError, ParameterError,
                     QFRError, SamplerError, SparseDataError, UnsupportedMethodError, ValidationError)
from .eqf import EmpiricalQuantileFunction, SampleSet, build_eqf, eval_eqf

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateSampleError", "MissingArtifactError", "OutOfRangeError", "ParameterError",
    "QFRError", "SamplerError", "SparseDataError", "UnsupportedMethodError", "ValidationError",
    "EmpiricalQuantileFunction", "SampleSet", "build_eqf", "eval_eqf",
]
