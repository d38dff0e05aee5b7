"""Exception hierarchy shared across the toolbox."""


class EpfError(Exception):
    """Base class for all toolbox errors."""


class IngestError(EpfError):
    """Malformed or inconsistent raw market data."""


class MissingHour(IngestError):
    """A calendar day has fewer than 24 hourly rows."""

    def __init__(self, timestamp: str):
        super().__init__(f"missing hourly row at {timestamp}")
        self.timestamp = timestamp


class DuplicateHour(IngestError):
    """More than one row for the same hour (e.g. a DST fall-back)."""

    def __init__(self, timestamp: str):
        super().__init__(f"duplicate hourly row at {timestamp}")
        self.timestamp = timestamp


class NonFinite(IngestError):
    """A NaN or infinite value in the input data."""

    def __init__(self, timestamp: str, column: str):
        super().__init__(f"non-finite value in column '{column}' at {timestamp}")
        self.timestamp = timestamp
        self.column = column


class GapInCalendar(IngestError):
    """An entire day is absent between the first and last date."""

    def __init__(self, timestamp: str):
        super().__init__(f"calendar gap: no rows for {timestamp}")
        self.timestamp = timestamp


class OutOfRange(EpfError):
    """A requested window falls outside the dataset."""


class InsufficientHistory(EpfError):
    """Not enough trailing days to build the requested features or fit."""


class ConstantColumn(EpfError):
    """A feature column has zero variance and cannot be standardized."""

    def __init__(self, index: int):
        super().__init__(f"feature column {index} is constant")
        self.index = index


class ShapeMismatch(EpfError):
    """An array does not have the shape the network expects."""


class NonPositiveSigma(EpfError):
    """A Gaussian standard deviation is zero or negative."""


class WrongHead(EpfError):
    """A distributional operation was applied to a point-head network."""
