"""Exception types raised by koopgen."""

from __future__ import annotations

from typing import Dict, Optional


class KoopgenError(Exception):
    """Base class for all koopgen errors."""


class InvalidInputError(KoopgenError, ValueError):
    """Input data, shapes or parameters violate a precondition."""


class ConfigError(InvalidInputError):
    """Run configuration failed schema validation."""


class OutOfDomainError(InvalidInputError):
    """A query point lies outside the declared input box."""


class UnsupportedOperationError(KoopgenError, NotImplementedError):
    """The requested operation is not defined for this object."""


class FitFailureError(KoopgenError, RuntimeError):
    """Least-squares fitting collapsed (numerical rank too small)."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, object]] = None) -> None:
        super().__init__(message)
        self.diagnostics: Dict[str, object] = dict(diagnostics or {})


class PlantStepError(KoopgenError, RuntimeError):
    """The reference simulator produced a non-finite state."""


class RankDeficiencyWarning(UserWarning):
    """Lifted data matrix does not have full row rank."""
