"""Exception types shared across the package."""


class UbalabError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(UbalabError):
    """A delimited input file failed to parse; carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class EmptyInputError(UbalabError):
    """An input file or record stream contained no usable records."""


class EmptyMatrixError(UbalabError):
    """An operation produced an interaction matrix with no users or no items."""


class InsufficientCandidatesError(UbalabError):
    """A sampling operation was asked for more elements than the candidate pool holds."""


class InsufficientDataError(UbalabError):
    """Not enough data points to compute a statistic (e.g. fewer than 3 groups)."""


class ContractError(UbalabError):
    """Arguments violate a cross-object consistency contract (e.g. allocation vs target spec)."""


class DivergenceError(UbalabError):
    """Model training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class CapacityError(UbalabError):
    """A brute-force search space exceeds the configured safety cap."""


class SnapshotFormatError(UbalabError):
    """A persisted artifact has a missing or mismatched format header."""
