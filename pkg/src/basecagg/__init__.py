"""Buffered asynchronous secure aggregation (BASecAgg) with a deterministic simulator."""

__version__ = "0.1.0"

from .errors import BASecAggError
from .field import DEFAULT_Q, PrimeField
from .protocol import ProtocolParams, Server, User
from .quantize import QuantParams, StalenessFn
from .sim import SimConfig, run, run_baseline_fedbuff

__all__ = [
    "BASecAggError",
    "DEFAULT_Q",
    "PrimeField",
    "ProtocolParams",
    "QuantParams",
    "Server",
    "SimConfig",
    "StalenessFn",
    "User",
    "run",
    "run_baseline_fedbuff",
]
