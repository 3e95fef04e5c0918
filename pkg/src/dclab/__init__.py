"""dclab: a compression-mechanism laboratory.

Exact range coding of discretised-Gaussian symbols, auditable parallel
coding schedules, linear context models, group-based offset-diversity
alignment, multi-granularity quantisation and rate-distortion metrics,
exercised on synthetic sources with known statistics.
"""

from .errors import ConfigError, ContractViolation, InputError, NumericalError, StreamError
from .lattice import GroupPartition, Lattice, MotionField

__version__ = "0.1.0"

__all__ = [
    "Lattice",
    "MotionField",
    "GroupPartition",
    "InputError",
    "StreamError",
    "ConfigError",
    "NumericalError",
    "ContractViolation",
]
