"""Exception types shared across the engine."""


class DimensionError(ValueError):
    """Array shapes do not satisfy an operation's contract."""


class SpecError(ValueError):
    """An architecture description is malformed or does not type-check."""


class ModelFormatError(ValueError):
    """A weight file is corrupt, truncated, or inconsistent with its spec."""


class DataError(Exception):
    """Dataset ingestion or pipeline failure."""


class RowError(DataError):
    """A malformed annotation row; message carries file and line context."""


class SampleError(DataError):
    """A sample cannot be processed (e.g. a degenerate region of interest)."""


class PlanError(DataError):
    """A class-balancing plan cannot be produced for the given histogram."""
