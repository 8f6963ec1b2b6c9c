"""Exception hierarchy shared by every depthseed module."""


class DepthSeedError(Exception):
    """Base class for all library errors."""


class DimensionError(DepthSeedError, ValueError):
    """Tensor shapes do not agree.

    ``axis`` names the offending axis (e.g. ``"C"``, ``"D"``) when known.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class ParameterError(DepthSeedError, ValueError):
    """An operation hyperparameter is out of range."""


class StateError(DepthSeedError, RuntimeError):
    """An object was used in the wrong lifecycle state."""


class ContractError(DepthSeedError, ValueError):
    """A caller violated a documented precondition."""


class ConfigError(DepthSeedError, ValueError):
    """Invalid architecture, layer name, strategy or configuration value."""


class TransferError(DepthSeedError, ValueError):
    """Weights cannot be copied between two models."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DataError(DepthSeedError, ValueError):
    """Malformed or inconsistent dataset content.

    ``rows`` lists offending manifest rows (1-based, header excluded) when the
    error comes from a manifest.
    """

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = list(rows) if rows else []


class FormatError(DepthSeedError, ValueError):
    """A binary or image file does not follow its format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(DepthSeedError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class MetricError(DepthSeedError, ValueError):
    """A metric is undefined for the given predictions."""


class ExportError(DepthSeedError, ValueError):
    """A diagnostic artifact cannot be produced for the requested layer."""
