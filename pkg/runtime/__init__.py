"""
Runtime components package: errors, simulator, scenarios, export and history
"""

from .errors import (ConfigError, DimensionError, DomainError, InfeasibleQoSError,
                     MMTCError, NoCrossingError, NumericError)

__all__ = ["MMTCError", "ConfigError", "DimensionError", "DomainError",
           "InfeasibleQoSError", "NoCrossingError", "NumericError"]
