"""Exception hierarchy. Each failure mode named by the contracts has a class."""


class CfAuditError(Exception):
    """Base class for all package errors."""


class ParseError(CfAuditError):
    pass


class SchemaError(CfAuditError):
    pass


class ValidationError(CfAuditError):
    """A data cell failed validation; carries the offending position."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateRange(CfAuditError):
    pass


class DegenerateData(CfAuditError):
    pass


class SchemaMismatch(CfAuditError):
    pass


class EmptyData(CfAuditError):
    pass


class CfNotFound(CfAuditError):
    pass


class GridTooLarge(CfAuditError):
    pass


class EmptySpace(CfAuditError):
    pass


class NotInSpace(CfAuditError):
    pass


class NoAdmissibleRecord(CfAuditError):
    pass


class RegenerationMismatch(CfAuditError):
    pass


class InsufficientSweep(CfAuditError):
    pass


class EmptySample(CfAuditError):
    pass


class ConfigError(CfAuditError):
    pass


class NoRuns(CfAuditError):
    pass
