"""
Exception hierarchy shared by every package.
"""


class NetiError(Exception):
    """Base class for all errors raised by this project."""


class ConfigError(NetiError):
    """Unknown config key, bad value or type mismatch."""


class ShapeError(NetiError):
    """Tensor shapes do not line up."""


class NonFiniteError(NetiError):
    """A NaN or Inf showed up in a computed value."""


class GraphStateError(NetiError):
    """Backward called before forward, or on a tensor the graph did not produce."""


class RangeError(NetiError):
    """A timestep, layer, truncation or index is outside its allowed range."""


class ZeroNormError(NetiError):
    """A vector that has to be normalized has zero norm."""


class TokenizationError(NetiError):
    """Prompt cannot be tokenized with the vocabulary."""


class ConditioningError(NetiError):
    """Placeholder injection does not match the prompt."""


class GuidanceUnavailableError(NetiError):
    """Guidance requested but the generator never learned an unconditional mode."""


class DivergenceError(NetiError):
    """Training loss became non-finite."""


class FrozenGeneratorError(NetiError):
    """Frozen generator weights changed during inversion."""


class WeightFileError(NetiError):
    """Base class for weight file problems."""


class BadMagicError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class UnknownSectionError(WeightFileError):
    pass


class ProbeMissingError(NetiError):
    """Prompt adherence requested without a trained attribute probe."""


class EmptySetError(NetiError):
    """A metric received an empty image or vector set."""
