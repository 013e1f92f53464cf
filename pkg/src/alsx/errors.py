"""Exception hierarchy shared across the package."""


class AlsxError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AlsxError):
    """Invalid hyperparameter or run configuration."""


class DataError(AlsxError):
    """Malformed or inconsistent input data (files, matrices, splits)."""


class ParseError(DataError):
    """Unparseable input file; message carries the line number."""


class CodecError(DataError):
    """Inconsistent dense batch (mask/ids disagree, bad row map)."""


class CollectiveError(AlsxError):
    """A collective operation failed: shape mismatch, missing worker,
    or the group was aborted because another worker errored."""


class NumericalError(AlsxError):
    """Non-finite values or numerical breakdown inside a solver."""


class SolverError(NumericalError):
    """A linear solve failed (e.g. Cholesky on a non-PD system).

    Carries the global row id of the offending system when known.
    """

    def __init__(self, message, row_id=None):
        super().__init__(message)
        self.row_id = row_id
