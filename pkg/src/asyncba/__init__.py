"""Simulator for asynchronous Byzantine agreement with a weighted global coin."""

from .core import (BOT, MINUS, PLUS, HarnessFault, InvariantViolation, ParamError,
                   ProtocolParams, SafetyViolation, derive_params, sgn)

__all__ = ["BOT", "MINUS", "PLUS", "HarnessFault", "InvariantViolation", "ParamError",
           "ProtocolParams", "SafetyViolation", "derive_params", "sgn"]
__version__ = "0.1.0"
