"""Horseshoe-prior Bayesian quantile regression."""

from hsbqr.errors import (
    ChainDivergenceError,
    DimensionError,
    DomainError,
    IngestionError,
    NumericalError,
)
from hsbqr.quantile import QuantileGrid, QuantileSpec, check_loss, quantile_constants
from hsbqr.rand import RngHandle
from hsbqr.sampler import PosteriorDraws, SamplerConfig, run_chain, run_chains

__version__ = "0.1.0"

__all__ = [
    "ChainDivergenceError",
    "DimensionError",
    "DomainError",
    "IngestionError",
    "NumericalError",
    "PosteriorDraws",
    "QuantileGrid",
    "QuantileSpec",
    "RngHandle",
    "SamplerConfig",
    "check_loss",
    "quantile_constants",
    "run_chain",
    "run_chains",
]
