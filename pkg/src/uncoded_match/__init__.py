"""Certify when uncoded (analog) transmission of correlated Gaussian sources is optimal."""

from .errors import (
    ConsistencyError,
    DegenerateSchemeError,
    InfeasibleDownstreamError,
    InvalidInputError,
    InvalidSpecError,
    NumericalFailureError,
)
from .model import BcChannel, BcScheme, CeoModel, MacProblem, SourceSpec, normalize_alpha, scheme_from_alpha
from .symmat import SymMatrix

__version__ = "0.1.0"
