"""Optimal-policy estimators and a Monte Carlo regret-rate laboratory."""

from ._backend import BACKEND
from .core import (
    ActionSet,
    ConfigurationError,
    Dataset,
    DgpSpec,
    Observation,
    Policy,
    PolicyClass,
    Propensity,
    RngStream,
    UnsupportedError,
    gamma_true,
    margin_dgp,
    regret_true,
    sample_iid,
    value_true,
)

__version__ = "0.1.0"
