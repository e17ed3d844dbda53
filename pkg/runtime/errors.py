"""
Exception hierarchy shared by the analysis, optimizers and runtime packages
"""

from typing import Optional


class MMTCError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 1

    def __init__(self, message: str, detail: Optional[str] = None):
        super().__init__(message)
        self.detail = detail

    def __str__(self) -> str:
        base = super().__str__()
        return f"{base} ({self.detail})" if self.detail else base


class ConfigError(MMTCError):
    """Invalid scenario document or inconsistent parameters"""

    exit_code = 2


class DimensionError(ConfigError):
    """Problem too large for an exhaustive method"""


class DomainError(MMTCError, ValueError):
    """Argument outside the mathematical domain of a formula"""


class NumericError(MMTCError, ArithmeticError):
    """A computation produced a value that cannot be represented"""


class InfeasibleQoSError(MMTCError):
    """The QoS target cannot be met within the admissible power range"""

    exit_code = 4

    def __init__(self, message: str, device: Optional[int] = None,
                 queue: Optional[int] = None, detail: Optional[str] = None):
        super().__init__(message, detail)
        self.device = device
        self.queue = queue


class NoCrossingError(MMTCError):
    """Arrival and service curves do not cross on the search bracket"""
