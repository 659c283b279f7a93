"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument violates a documented precondition."""


class ShapeError(ContractError):
    """An array or tensor has the wrong shape, dtype, or value range."""


class TrainingError(RuntimeError):
    """Base-model training diverged (NaN/Inf loss)."""


class AdaptationError(RuntimeError):
    """Per-image adaptation could not produce a usable result."""


class DecodeError(RuntimeError):
    """A bitstream is malformed or truncated."""


class IncompatibleBitstreamError(DecodeError):
    """A bitstream was produced against a different model checkpoint."""
