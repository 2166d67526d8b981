"""bdglab: a finite-dimensional laboratory for vector-valued BDG inequalities."""

from .errors import BdgLabError, ConfigError
from .norms import NormSpec, lp, mixed, weighted_lp

__version__ = "0.1.0"

__all__ = ["BdgLabError", "ConfigError", "NormSpec", "lp", "mixed", "weighted_lp", "__version__"]
