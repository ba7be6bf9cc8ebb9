"""
Error types for the caloric lab.

Every error carries a human-readable ``detail`` and the process exit status the
CLI should return when it escapes a run, mirroring the status-code/detail pair
used for request errors.
"""

from typing import Any, List, Optional


class LabError(Exception):
    exit_code = 1

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code

    def __str__(self) -> str:
        return self.detail


class ConfigError(LabError):
    exit_code = 2


class ParameterError(LabError, ValueError):
    exit_code = 2


class GeometryError(LabError, ValueError):
    exit_code = 2


class ResolutionError(LabError, ValueError):
    exit_code = 2


class WalkBudgetExceeded(LabError):
    pass


class SearchExhausted(LabError):
    pass


class AuditFailure(LabError):
    """Raised after a run whose artifacts were written but whose audits did not all pass."""

    exit_code = 1

    def __init__(self, detail: str, failed: Optional[List[str]] = None):
        super().__init__(detail)
        self.failed = list(failed or [])


class NotApplicable(LabError):
    """Raised when a cube is neither type 1 nor type 2."""

    exit_code = 1

    def __init__(self, detail: str, offenders: Optional[List[Any]] = None):
        super().__init__(detail)
        self.offenders = list(offenders or [])


class MeasureError(LabError, ValueError):
    exit_code = 2
