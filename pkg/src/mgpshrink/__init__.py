"""Shrinkage diagnostics for the multiplicative gamma process prior."""

from .prior import MgpHyperparams
from .specfun import DomainError

__version__ = "0.1.0"
__all__ = ["MgpHyperparams", "DomainError", "__version__"]
