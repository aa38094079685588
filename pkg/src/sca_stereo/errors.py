"""Exception types shared across the package.

Plain ``ValueError`` is used for invalid arguments (bad shapes, bad enum
values); the classes here mark conditions callers may want to handle
separately.
"""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class UndefinedMetricError(ValueError):
    """A metric was requested over an empty set of valid pixels."""


class FormatError(ValueError):
    """A file does not conform to its on-disk format.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(ValueError):
    """A run configuration is inconsistent or refers to missing inputs."""
