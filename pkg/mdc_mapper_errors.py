"""
MDC Mapper: Errors
Exception hierarchy shared by every module and mapped to CLI exit codes.
"""

from typing import Optional


class MdcMapperError(Exception):
    """Base class for all mapper failures."""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class NormalizationError(MdcMapperError):
    pass


class TileRangeError(MdcMapperError):
    pass


class WorkloadError(MdcMapperError):
    exit_code = 2


class ConfigError(MdcMapperError):
    exit_code = 2


class TransformError(MdcMapperError):
    pass


class AnalysisError(MdcMapperError):
    pass


class InfeasibleError(MdcMapperError):
    exit_code = 3


class StyleError(MdcMapperError):
    pass


class ScaleError(MdcMapperError):
    pass


class MdcParseError(MdcMapperError):
    """Textual MDC could not be parsed. line and column are 1-based."""

    def __init__(self, message: str, line: int, column: Optional[int] = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.reason = message
        self.line = line
        self.column = column
