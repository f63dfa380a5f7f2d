"""Platform error hierarchy.

Every error carries a stable machine-readable ``code`` so API clients and
tests can assert on it without parsing messages.
"""

from __future__ import annotations

from typing import Any, Optional


class PlatformError(Exception):
    """Base class for all platform errors."""

    code = "INTERNAL"

    def __init__(self, message: str, details: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"code": self.code, "message": self.message}
        if self.details:
            out["details"] = self.details
        return out


class NotFoundError(PlatformError):
    code = "NOT_FOUND"


class ForbiddenError(PlatformError):
    code = "FORBIDDEN"


class UnauthorizedError(PlatformError):
    code = "UNAUTHORIZED"


class ConflictError(PlatformError):
    """Duplicate resource, e.g. re-registering the same (owner, name, kind)."""

    code = "CONFLICT"


class InUseError(PlatformError):
    """Deletion refused because a live twin instance still references the asset."""

    code = "IN_USE"


class BadRequestError(PlatformError):
    code = "BAD_REQUEST"


class ParseError(BadRequestError):
    """Malformed configuration document (syntax or schema)."""

    code = "PARSE_ERROR"

    def __init__(self, message: str, line: Optional[int] = None,
                 column: Optional[int] = None, path: Optional[str] = None):
        details: dict[str, Any] = {}
        if line is not None:
            details["line"] = line
        if column is not None:
            details["column"] = column
        if path is not None:
            details["path"] = path
        super().__init__(message, details)


class UnknownPathError(BadRequestError):
    """A change-set or override path does not exist in the target document."""

    code = "UNKNOWN_PATH"


class ValidationFailedError(PlatformError):
    """Configuration rejected by the validator; carries the full report."""

    code = "VALIDATION_FAILED"

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report

    def to_dict(self) -> dict[str, Any]:
        out = super().to_dict()
        if self.report is not None:
            out["report"] = self.report.to_dict() if hasattr(self.report, "to_dict") else self.report
        return out


class InvalidTransitionError(PlatformError):
    code = "INVALID_TRANSITION"


class UnknownSnapshotError(PlatformError):
    code = "UNKNOWN_SNAPSHOT"


class CapacityError(PlatformError):
    """Workspace pool cannot satisfy the requested resources."""

    code = "CAPACITY_EXHAUSTED"


class UnknownTargetError(PlatformError):
    """Command sent to a channel no registered connector listens on."""

    code = "UNKNOWN_TARGET"


class NoAnalysisPipelineError(PlatformError):
    """The instance's configuration declares no analysis-role function asset."""

    code = "NO_ANALYSIS_PIPELINE"


class UnknownTriggerError(PlatformError):
    """Event-triggered reconfiguration requested but no registered rule matches."""

    code = "UNKNOWN_TRIGGER"
