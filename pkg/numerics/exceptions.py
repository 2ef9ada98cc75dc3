class KmUnetError(Exception):
    """Base class for every error raised by the project."""


class DimensionError(KmUnetError, ValueError):
    """Shapes or geometry do not fit the operation."""


class ContractError(KmUnetError, ValueError):
    """A documented pre-condition was violated by the caller."""


class ConfigError(KmUnetError, ValueError):
    """Invalid model, training or run configuration."""


class NumericsError(KmUnetError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class VerificationError(KmUnetError):
    """A gradient or oracle suite did not pass."""


class CheckpointError(KmUnetError, OSError):
    """A checkpoint file could not be written or read."""


class SampleIOError(KmUnetError, OSError):
    """An image or mask file could not be read or written."""
