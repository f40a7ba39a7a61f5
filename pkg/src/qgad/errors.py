"""Exception hierarchy shared by all qgad modules."""


class QgadError(Exception):
    """Base class for every error raised by this package."""


class ParseError(QgadError):
    """A data or config file could not be parsed.

    ``line`` is the 1-based line number when the failure is tied to one.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructureError(QgadError):
    """Ragged channels, mismatched lengths, or shape errors."""


class DegenerateRangeError(QgadError):
    """A channel is constant, so min/max normalization is undefined."""


class InvalidSplitError(QgadError):
    """A train/test split would put anomalous samples in the training part."""


class ConfigError(QgadError):
    """A configuration value is missing or out of its allowed range."""


class ConfigMismatchError(QgadError):
    """Data or config does not match the quantization stored in a bundle."""


class TrainingDivergedError(QgadError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class BundleError(QgadError):
    """A model bundle is truncated, corrupt, or of an unsupported version."""


class InfeasiblePlanError(QgadError):
    """Synthetic anomalies cannot be placed under the requested constraints."""


class MissingArtifactsError(QgadError):
    """A report was requested for a run directory without usable outputs."""
