# staflow_backend/errors.py
from typing import Iterable, List, Optional


class StaFlowError(Exception):
    """Base class; `exit_code` is the process status main.py returns."""

    exit_code = 1


# exit status 2
class ConfigError(StaFlowError):
    exit_code = 2

    def __init__(self, message: str, problems: Optional[Iterable[str]] = None):
        self.problems: List[str] = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)


class DimensionError(ConfigError):
    pass


class UsageError(ConfigError):
    pass


class PrecisionError(ConfigError):
    pass


# exit status 3
class DataError(StaFlowError):
    exit_code = 3


class FormatError(DataError):
    pass


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncationError(FormatError):
    def __init__(self, path, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{path}: truncated file, expected {expected} bytes but found {actual}"
        )


class IntegrityError(FormatError):
    pass


class LabelRangeError(DataError):
    pass


class CSVFormatError(DataError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


# exit status 4
class NumericalError(StaFlowError):
    exit_code = 4
