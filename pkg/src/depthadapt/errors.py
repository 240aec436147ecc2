"""Exception types shared across the package.

Errors are split by what the caller can do about them: bad arguments or
configs (`ValidationError`, `ConfigError`), broken on-disk artifacts
(`DatasetError` subclasses, `CheckpointError`), and contract violations
between fitted components (`ModelBindingError`).
"""


class DepthAdaptError(Exception):
    """Base class for all package errors."""


class ValidationError(DepthAdaptError, ValueError):
    """An input array, sample, or argument violates a precondition."""


class ConfigError(DepthAdaptError, ValueError):
    """A run configuration contains unknown keys or invalid values."""


class DatasetError(DepthAdaptError):
    """Base class for on-disk dataset failures."""


class MissingSampleError(DatasetError):
    """A manifest lists a sample id whose container file is absent."""

    def __init__(self, sample_id, path):
        self.sample_id = sample_id
        self.path = str(path)
        super().__init__(f"sample {sample_id!r} missing on disk: {self.path}")


class ChecksumError(DatasetError):
    """A sample file's bytes do not match the checksum in the manifest."""

    def __init__(self, sample_id, expected, actual):
        self.sample_id = sample_id
        super().__init__(
            f"sample {sample_id!r} checksum mismatch: "
            f"manifest {expected[:12]}.., file {actual[:12]}.."
        )


class GeometryError(DatasetError):
    """Loaded arrays disagree with the geometry recorded in the manifest."""


class CheckpointError(DepthAdaptError):
    """A checkpoint file is missing, corrupt, or built for another arch."""


class ModelBindingError(DepthAdaptError):
    """An energy model is used with a depth model it was not trained against."""


class NoSparseAnchorsError(DepthAdaptError):
    """A frame has no valid sparse points, so sparse consistency is undefined."""


class NumericalError(DepthAdaptError):
    """A loss or metric became non-finite during optimization."""
