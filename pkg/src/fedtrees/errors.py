"""Exception taxonomy shared across the package.

The split mirrors the process exit codes: configuration problems (exit 2),
data problems (exit 3), and everything else (exit 4).
"""


class ConfigError(ValueError):
    """A config file or run request is malformed or inconsistent."""


class DataError(ValueError):
    """An input dataset is missing, malformed, or violates a precondition."""


class ModelFormatError(DataError):
    """A serialized model document is truncated, corrupt, or the wrong version."""
