"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration (architecture string, flags, unknown mode, ...)."""


class DataFormatError(ValueError):
    """Malformed dataset or serialization payload; message carries location."""


class CheckpointError(ValueError):
    """Checkpoint container violates the binary format contract."""
