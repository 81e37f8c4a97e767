"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to.
"""


class TdhtrError(Exception):
    exit_code = 1


class DimensionError(TdhtrError, ValueError):
    exit_code = 2


class DomainError(TdhtrError, ValueError):
    exit_code = 2


class ConfigurationError(TdhtrError, ValueError):
    exit_code = 2


class NumericError(TdhtrError, FloatingPointError):
    exit_code = 3


class InfeasibleAlignmentError(DomainError):
    """Target cannot be aligned to the given number of frames."""


class ResourceError(TdhtrError, RuntimeError):
    exit_code = 3


class CheckpointError(TdhtrError, IOError):
    exit_code = 4


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class ShapeError(CheckpointError):
    pass
