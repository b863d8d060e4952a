"""Shared exception types for configuration and input validation."""


class ValidationError(ValueError):
    """A spec or input value is outside its allowed range.

    Carries the offending field name so callers can report it.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ConfigurationError(ValueError):
    """A runtime configuration value is unusable (unknown preset, probe above Nyquist, ...)."""


class ShapeError(ValueError):
    """Input array dimensions disagree with the declared channel count or length."""


class DesignError(ValueError):
    """A filter specification cannot be realized (cutoff at or above Nyquist, bad order, ...)."""


class SizeError(ValueError):
    """A transform size constraint is violated (FFT length must be a power of two)."""


class NumericError(ValueError):
    """Input contains non-finite samples; carries the first offending index."""

    def __init__(self, index: int, message: str):
        self.index = index
        super().__init__(f"sample {index}: {message}")
