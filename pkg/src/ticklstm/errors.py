"""Exception hierarchy.

Every error raised by the library derives from :class:`TickLstmError`. The
three intermediate classes map onto CLI exit codes (config=1, data=2,
runtime/numeric=3).
"""

from __future__ import annotations


class TickLstmError(Exception):
    exit_code = 3


class ConfigError(TickLstmError, ValueError):
    exit_code = 1


class DataError(TickLstmError, ValueError):
    exit_code = 2


class NumericError(TickLstmError, ArithmeticError):
    exit_code = 3


# trade-io


class MalformedRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class NonMonotonicTimestamp(DataError):
    def __init__(self, line: int):
        super().__init__(f"line {line}: timestamp decreases")
        self.line = line


class EmptySource(DataError):
    pass


class HttpError(DataError):
    def __init__(self, status: int, url: str = ""):
        super().__init__(f"HTTP {status} from {url}" if url else f"HTTP {status}")
        self.status = status


class RateLimited(DataError):
    pass


class GapDetected(DataError):
    pass


class InvalidConfig(ConfigError):
    pass


# bars / stationarity / dataset


class UnsortedInput(DataError):
    pass


class MissingReturn(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooShort(DataError):
    pass


class SingularDesign(NumericError):
    pass


class Infeasible(ConfigError):
    pass


class InvalidFraction(ConfigError):
    pass


class NonFinite(NumericError):
    pass


# neural


class ShapeMismatch(DataError):
    pass


class Diverged(NumericError):
    pass


class CorruptFile(DataError):
    pass


class VersionMismatch(DataError):
    pass


# backtest


class ModelShapeMismatch(DataError):
    pass


class WindowTooLarge(DataError):
    pass


class MissingBar(DataError):
    pass


# cli


class ConfigInvalid(ConfigError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(violations))
        self.violations = list(violations)


class MissingArtifact(DataError):
    def __init__(self, stage: str):
        super().__init__(f"missing upstream artifact from stage {stage!r}")
        self.stage = stage
