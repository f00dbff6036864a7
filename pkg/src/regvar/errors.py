"""Exception types shared across the package."""


class RegvarError(Exception):
    """Base class for all data and numerical errors raised by regvar."""


class MissingColumn(RegvarError):
    """A required column is absent from an input file header."""


class ParseError(RegvarError):
    """A field could not be parsed; carries row/column context when known."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class UnknownSection(RegvarError):
    """A log references a section_id outside the configured universe."""


class NoHistory(RegvarError):
    """Imputation found no present reference value for a (section, slot)."""


class TooFewDays(RegvarError):
    """An operation needs more whole days than the input provides."""


class ShapeMismatch(RegvarError):
    """Array or file dimensions are inconsistent."""


class WindowTooShort(RegvarError):
    """A slot window does not contain enough slots for the operation."""


class RankDeficient(RegvarError):
    """An unpenalized least-squares design lacks full column rank."""


class SingularSigma(RegvarError):
    """The pooled covariance is singular beyond jitter repair."""


class DegenerateRow(RegvarError):
    """A random coefficient row stayed empty after the resampling budget."""


class DegenerateFeatures(RegvarError):
    """All sections have identical descriptive features; clustering is void."""
