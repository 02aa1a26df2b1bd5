"""Exception types, one per pipeline stage."""


class GrapeError(Exception):
    """Base class for all pipeline errors."""


class IngestError(GrapeError):
    """Bad source data: malformed JSONL, invalid records, duplicate ids."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)


class ScoreError(GrapeError):
    """Scoring failed for a response (backend failure, bad logprobs)."""

    def __init__(self, message: str, *, response_id: str | None = None):
        self.response_id = response_id
        if response_id is not None:
            message = f"{message} (response_id={response_id})"
        super().__init__(message)


class SelectError(GrapeError):
    """Selection could not be applied to a pool."""


class ExportError(GrapeError):
    """Selection results could not be resolved against their pools."""


class DistError(GrapeError):
    """Invalid finite distribution or subset operation."""


class CostError(GrapeError):
    """Cost model inputs incomplete for the requested method."""


class ReportError(GrapeError):
    """Report inputs inconsistent (pool-set mismatch, wrong k)."""


class ConfigError(GrapeError):
    """Invalid configuration or backend construction input."""

    def __init__(self, message: str, violations: list[str] | None = None):
        self.violations = violations or []
        if self.violations:
            message = message + "\n  - " + "\n  - ".join(self.violations)
        super().__init__(message)


class FormatError(GrapeError):
    """On-disk artifact violates its file-format contract."""

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + where)
