"""
Pipeline Errors
Exception hierarchy shared by every service, with the exit code each maps to on the CLI
"""

from typing import Any, Dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class PipelineError(Exception):
    """Base class for all pipeline failures"""

    exit_code = EXIT_USAGE

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable form printed by --error-json"""
        payload = {
            'error': type(self).__name__,
            'message': self.message,
            'exit_code': self.exit_code,
        }
        if self.details:
            payload['details'] = {k: _jsonable(v) for k, v in self.details.items()}
        return payload


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_jsonable(v) for v in value]
    return str(value)


# Usage / configuration (exit 1)

class UsageError(PipelineError):
    exit_code = EXIT_USAGE


class ConfigurationError(PipelineError, ValueError):
    exit_code = EXIT_USAGE


# Data / validation (exit 2)

class DataError(PipelineError, ValueError):
    exit_code = EXIT_DATA


class IngestError(DataError):
    """Source could not be read at all"""


class SchemaError(DataError):
    """Too many malformed records, usually a wrong field mapping"""


class EmptyVocabularyError(DataError):
    """No term survived the occurrence threshold"""


class LexiconError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class AlignmentError(DataError):
    pass


class MissingStageError(DataError):
    """An upstream stage output is missing"""


class MissingExogError(DataError):
    """Future exogenous rows were not supplied for a forecast"""


class RegressionError(DataError):
    """Exogenous design matrix is rank deficient"""


class LockError(DataError):
    pass


# Numeric / convergence (exit 3)

class NumericError(PipelineError, ArithmeticError):
    exit_code = EXIT_NUMERIC


class FitFailureError(NumericError):
    pass


class GridSearchError(NumericError):
    pass


class ConvergenceError(NumericError):
    pass


class InvariantViolation(NumericError):
    pass


class StandardizationError(NumericError):
    pass


class RangeError(DataError, IndexError):
    """An index (topic id, bucket span) is outside the valid range"""
