"""Exception hierarchy shared by every bdglab module."""


class BdgLabError(Exception):
    """Base class for errors raised by the laboratory."""


class DimensionMismatchError(BdgLabError, ValueError):
    """A vector, form or path does not match the dimension it is combined with."""


class NotPSDError(BdgLabError, ValueError):
    """A form that must be nonnegative has a materially negative eigenvalue."""


class EigenDecompositionError(BdgLabError, ArithmeticError):
    """The symmetric eigensolver failed (usually an ill-conditioned or non-finite input)."""


class GridMismatchError(BdgLabError, ValueError):
    """Two time grids that must coincide or nest do not."""


class PredictabilityError(BdgLabError, ValueError):
    """A transform or integrand violates its predictability or contraction contract."""


class ConfigError(BdgLabError, ValueError):
    """Invalid settings or experiment configuration."""


class AsymmetricFormError(BdgLabError, ValueError):
    """A matrix offered as a symmetric form is asymmetric beyond rounding."""


class EnumerationLimitError(BdgLabError, ValueError):
    """A tree is too deep for the requested (exhaustive or sampled) mode."""
