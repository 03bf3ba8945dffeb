"""Exception hierarchy shared across the pipeline."""


class CosalError(Exception):
    """Base class for all package-specific failures."""


class DatasetError(CosalError):
    """Dataset tree is missing, malformed, or inconsistent with the GT tree."""


class CacheCorruptionError(CosalError):
    """A cached feature payload does not match its manifest entry."""


class ConfigurationError(CosalError):
    """A backend or segmenter cannot be constructed from the given config."""


class BackendError(CosalError):
    """A feature or segmentation backend failed during inference."""


class EvaluationError(CosalError):
    """Predictions and ground truth cannot be paired up for scoring."""
