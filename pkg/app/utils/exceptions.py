from typing import Optional


class MevaError(Exception):
    """Base class for every error raised by the aggregation library."""


class InvalidInput(MevaError):
    """Inputs with the wrong shape, non-finite entries or inconsistent lengths."""


class EmptyBank(MevaError):
    """An operation received zero models."""


class SingularCovariance(MevaError):
    """A covariance or moment matrix could not be factorized, even with a nugget."""


class DegenerateRotation(MevaError):
    """The rotated-basis weight denominator vanished."""


class FitFailed(MevaError):
    """A regression system was singular after the nugget retry."""


class NoDescent(MevaError):
    """An iterative fit could not decrease its objective after repeated step halving."""


class DegenerateCase(MevaError):
    """A theorem case violates the closed-form hypotheses."""


class MissingColumn(MevaError):
    """A requested CSV column is absent."""


class ParseError(MevaError):
    """A CSV cell could not be parsed as a number."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column


class InvalidConfig(MevaError):
    """Unknown configuration field, bad size or unknown experiment."""


class SchemaMismatch(MevaError):
    """A results CSV does not carry the columns a plot kind needs."""


class OutputError(MevaError):
    """Artifacts could not be written to the output directory."""
