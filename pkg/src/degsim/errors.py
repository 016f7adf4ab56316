"""Exception hierarchy shared across the toolkit.

CLI exit-code mapping: ValidationError -> 2, data/format/coverage errors -> 3,
SearchBudgetExceeded -> 4.
"""


class DegsimError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(DegsimError):
    """Array dimensions are inconsistent with the operation's contract."""


class ValidationError(DegsimError):
    """Configuration, spec, or schema content is invalid."""


class FormatError(DegsimError):
    """A serialized artifact (DDRF, JSON table, manifest) is malformed."""


class UnsupportedImageError(FormatError):
    """Raster file uses an unsupported mode or bit depth."""


class DataError(DegsimError):
    """Inputs are structurally valid but insufficient or unusable."""


class FitError(DataError):
    """Sample statistics are degenerate; no distribution fit is possible."""


class CoverageError(DegsimError):
    """A performance oracle was asked about a group it has no entry for."""


class SearchBudgetExceeded(DegsimError):
    """The grouping search exhausted its oracle-call budget."""
