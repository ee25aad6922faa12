"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when a run is requested with invalid or inconsistent settings."""


class PerSampleGradientError(ConfigurationError):
    """Raised when per-sample gradients are requested for a model that
    normalizes over batch statistics (per-sample gradients are undefined
    under batch statistics)."""


class IdxFormatError(ValueError):
    """Raised when an IDX file is malformed or truncated."""
