"""Bayesian nonnegative matrix factorisation and tri-factorisation with
multiplicative-update, Gibbs, ICM and variational inference engines."""

from .masked import MaskedMatrix, from_dense, i_divergence, mse
from .state import HyperParams, NmfState, NmtfState, VbNmfState, VbNmtfState, predict
from .trace import StopRule, TraceRecord

__version__ = "0.1.0"

__all__ = [
    "HyperParams",
    "MaskedMatrix",
    "NmfState",
    "NmtfState",
    "StopRule",
    "TraceRecord",
    "VbNmfState",
    "VbNmtfState",
    "from_dense",
    "i_divergence",
    "mse",
    "predict",
]
