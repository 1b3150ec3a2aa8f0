"""Exception hierarchy shared across the package.

Exit-code contract for the CLI: 1 = configuration, 2 = data, 3 = numeric,
4 = I/O (OSError is mapped by the CLI, not wrapped here).
"""


class FedgasimError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FedgasimError):
    """Invalid configuration value or combination."""

    exit_code = 1


class ComparisonError(FedgasimError):
    """Two run summaries cannot be compared (different tasks)."""

    exit_code = 1


class DataError(FedgasimError):
    """Dataset construction or parsing failed."""

    exit_code = 2


class IdxParseError(DataError):
    """IDX byte stream is malformed."""


class IdxMagicError(IdxParseError):
    """Magic number does not match the expected IDX record type."""


class IdxTruncatedError(IdxParseError):
    """IDX stream ends before the declared payload."""


class IdxCountMismatchError(IdxParseError):
    """Image and label files declare different sample counts."""


class CapacityError(DataError):
    """A subset request exceeds the samples available in the source."""


class EmptyDatasetError(DataError):
    """A dataset with zero samples was requested or produced."""


class InvalidSampleError(DataError):
    """A sample's class is impossible under the given class counts."""


class EvaluationError(DataError):
    """A metric was requested over an empty evaluation."""


class DimensionError(FedgasimError):
    """Tensor shapes do not line up."""

    exit_code = 3


class NumericError(FedgasimError):
    """Non-finite values were produced where finite ones are required."""

    exit_code = 3
