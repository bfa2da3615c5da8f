"""
Exception hierarchy for HardyLab
"""


class HardyLabError(Exception):
    """Base class for every error raised by the lab"""


class SpaceError(HardyLabError, ValueError):
    """Malformed coordinate space or random variable, level out of range, space too large"""


class DimensionMismatch(HardyLabError, ValueError):
    """Objects living on different spaces or with incompatible dimensions"""


class ExponentError(HardyLabError, ValueError):
    """Invalid exponent vector, aggregation exponent or threshold"""


class MeasurabilityError(HardyLabError, ValueError):
    """A sequence, stopping time or multiplier is not adapted as required"""


class MartingaleError(HardyLabError, ValueError):
    """Martingale invariants violated"""


class RegularityError(HardyLabError):
    """Regular-case construction requested on a space that is not regular enough"""


class ConfigError(HardyLabError, ValueError):
    """Malformed experiment configuration or command-line arguments"""


class CertificateError(HardyLabError, AssertionError):
    """An inequality that must hold exactly was violated"""
