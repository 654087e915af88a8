"""Exception hierarchy.

Data and argument problems derive from ``ValueError`` so callers that already
catch ``ValueError`` keep working; runtime failures of training derive from
``RuntimeError``.
"""

from typing import Any, Optional


class DataError(ValueError):
    """Input data cannot be used as given."""


class CSVParseError(DataError):
    """A CSV file does not conform to its documented format."""

    def __init__(self, message: str, *, path: Any = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
        if line is not None:
            location = f"{location}:{line}" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class RaggedRowError(CSVParseError):
    """A row has a different number of cells than the header."""


class NonNumericCellError(CSVParseError):
    """A value cell could not be parsed as a finite float."""


class DuplicateSeriesIdError(CSVParseError):
    """The same series_id appears on more than one row."""


class CovariateMismatchError(CSVParseError):
    """The covariate file does not line up with the value columns."""


class EmptyWindowError(DataError):
    """No full input+target window fits in the series."""


class SplitError(DataError):
    """The collection is too small to populate every split group."""


class ProtocolError(DataError):
    """An evaluation protocol precondition is violated."""


class CheckpointFormatError(DataError):
    """A checkpoint file is truncated or malformed."""


class ShapeError(ValueError):
    """Tensor shapes are inconsistent with the configuration."""


class ConfigurationError(ValueError):
    """A configuration value or combination is invalid."""


class ConfigFileError(ConfigurationError):
    """A configuration file line is malformed or names an unknown key."""

    def __init__(self, message: str, *, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class SamplingError(ValueError):
    """Contrastive negatives cannot be drawn from the given batch."""


class MaintenanceError(RuntimeError):
    """Codebook maintenance was requested without the data it needs."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message: str, diagnostics: Optional[dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        super().__init__(f"{message} ({details})" if details else message)
