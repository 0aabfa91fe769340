from __future__ import annotations

from typing import Any, Dict, Optional


class KbrwError(Exception):
    exit_code = 1

    def to_dict(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self), "exit_code": self.exit_code}


class ParameterError(KbrwError, ValueError):
    exit_code = 2


class ConfigError(KbrwError, ValueError):
    exit_code = 2


class DomainError(KbrwError, ValueError):
    exit_code = 2


class CalibrationError(KbrwError):
    exit_code = 2


class InfimumNotInteriorError(KbrwError):
    """The Laplace transform has no interior minimizer at a positive point."""

    exit_code = 4


class SolverError(KbrwError):
    exit_code = 4


class ConvergenceError(SolverError):
    exit_code = 4


class ResourceError(KbrwError):
    exit_code = 3


class CensoredWalkError(KbrwError):
    """A walk hit max_steps before leaving the strip."""

    exit_code = 3

    def __init__(self, message: str, position: float, steps: int, partial: Optional[Dict[str, float]] = None) -> None:
        super().__init__(message)
        self.position = position
        self.steps = steps
        self.partial = partial or {}
