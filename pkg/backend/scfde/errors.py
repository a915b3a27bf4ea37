# backend/scfde/errors.py
# =============================================================================
# Every error the library raises on purpose lives here.
# The CLI and the HTTP service catch ScfdeError and turn it into an exit code
# or an HTTP status; anything else is a real bug.
# =============================================================================

from typing import Any, List, Optional


class ScfdeError(Exception):
    """Base class for all scfde errors."""


# ---------- shapes and inputs ----------
class InvalidDimensionError(ScfdeError, ValueError):
    pass

class InvalidLengthError(ScfdeError, ValueError):
    pass

class NumericInputError(ScfdeError, ValueError):
    pass

class InvalidParameterError(ScfdeError, ValueError):
    pass

class DomainError(ScfdeError, ValueError):
    pass


# ---------- matrix factorizations ----------
class SymmetryError(ScfdeError):
    pass

class IndefiniteMatrixError(ScfdeError):
    pass

class RankDeficientError(ScfdeError):
    pass

class SingularityError(ScfdeError):
    pass

class ConditioningError(ScfdeError):
    pass


# ---------- solver ----------
class UnboundedUpdateError(ScfdeError):
    pass

class InstanceTooLargeError(ScfdeError):
    pass

class ConvergenceError(ScfdeError):
    """Raised when the power-allocation loop runs out of iterations.

    `best` holds the best feasible PowerAllocation seen so far so callers can
    still use it (or report it) if they want to.
    """

    def __init__(self, message: str, best: Optional[Any] = None):
        super().__init__(message)
        self.best = best


# ---------- configuration ----------
class ConfigurationError(ScfdeError):
    pass

class SchemaError(ConfigurationError):
    def __init__(self, key: str, section: Optional[str] = None):
        where = f"[{section}] " if section else ""
        super().__init__(f"unknown config key: {where}{key}")
        self.key = key
        self.section = section

class ConfigValidationError(ConfigurationError):
    def __init__(self, fields: List[str], detail: str = ""):
        msg = "invalid config field(s): " + ", ".join(fields)
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.fields = fields
