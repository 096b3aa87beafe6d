"""Exception types raised across the package."""


class AfcnError(Exception):
    """Base class for all package errors."""


class ShapeError(AfcnError, ValueError):
    pass


class FormatError(AfcnError, ValueError):
    pass


class TooShortError(ShapeError):
    pass


class ConfigError(AfcnError, ValueError):
    pass


class ManifestError(AfcnError, ValueError):
    pass


class SplitError(AfcnError, ValueError):
    pass


class EncoderImportError(AfcnError, ValueError):
    pass


class MetricError(AfcnError, ValueError):
    """Raised when a metric is undefined (e.g. no scored utterances)."""


class TrainingError(AfcnError, RuntimeError):
    pass
