from __future__ import annotations

from typing import Any, Dict, Optional


class PhasingError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(PhasingError, ValueError):
    pass


class IllConditionedSensingError(DomainError):
    pass


class ModelDomainError(DomainError):
    def __init__(self, message: str, inputs: Optional[Dict[str, Any]] = None):
        self.inputs = dict(inputs or {})
        if self.inputs:
            detail = ", ".join(f"{k}={v!r}" for k, v in self.inputs.items())
            message = f"{message} ({detail})"
        super().__init__(message)


class CoefficientDomainError(DomainError):
    pass


class NoIgnitionError(PhasingError):
    pass


class OptimizerFailure(PhasingError):
    def __init__(self, message: str, log: Any = None):
        super().__init__(message)
        # convergence log up to the failure, as a DataFrame
        self.log = log


class ConfigError(PhasingError, ValueError):
    pass


class PlantAbort(PhasingError):
    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostic = dict(diagnostic or {})


__all__ = [
    "PhasingError",
    "DomainError",
    "IllConditionedSensingError",
    "ModelDomainError",
    "CoefficientDomainError",
    "NoIgnitionError",
    "OptimizerFailure",
    "ConfigError",
    "PlantAbort",
]
