"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration and data problems
exit 1, I/O and decode problems exit 2 (see cli.py).
"""


class VoltaVisionError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(VoltaVisionError):
    """Invalid configuration value (class counts, fold counts, hyperparameters)."""


class DataError(VoltaVisionError):
    """Dataset, label, or batch-content problem."""


class ShapeError(VoltaVisionError):
    """Tensor or parameter shape mismatch."""


class NumericError(VoltaVisionError):
    """Non-finite values encountered where finite math was required."""


class DecodeError(VoltaVisionError):
    """An input file exists but cannot be decoded."""


class CheckpointError(VoltaVisionError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic bytes."""


class BadVersionError(CheckpointError):
    """Checkpoint format version is not supported."""


class TruncatedBlobError(CheckpointError):
    """Weight blob is shorter than the manifest promises."""


class ManifestMismatchError(CheckpointError):
    """Manifest disagrees with the blob length or the declared architecture."""
