"""Exception types shared across the engine."""


class ConfigError(ValueError):
    """Invalid parameter combination (rejected before any work starts)."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite loss); message carries the step index."""


class StreamError(RuntimeError):
    """Streaming failed mid-run (e.g. conditioning underrun at a given index)."""


class CheckpointError(RuntimeError):
    """Model checkpoint could not be read or written."""


class StoreError(RuntimeError):
    """Sequence file could not be read."""


class BadMagicError(StoreError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(StoreError):
    """File ends before the byte count the header promises."""


class VersionError(StoreError):
    """File format version is not supported."""
