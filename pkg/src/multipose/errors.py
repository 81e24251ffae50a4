"""Exception types shared across the package."""


class DegenerateInputError(ValueError):
    """Input is numerically degenerate (zero vector, rank-deficient matrix)."""


class ConfigurationError(ValueError):
    """Invalid grid, scene, model or training configuration."""


class EnvelopeError(RuntimeError):
    """Rejection sampler acceptance rate collapsed."""


class FormatError(ValueError):
    """A file on disk does not match the expected layout or checksum."""


class NonFiniteLossError(FloatingPointError):
    """Training loss became NaN/inf; carries the offending sample index."""

    def __init__(self, sample_index, message=None):
        self.sample_index = sample_index
        super().__init__(message or f"non-finite loss at sample {sample_index}")
