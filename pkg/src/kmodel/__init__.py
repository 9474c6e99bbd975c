"""Ribbon graphs, Kontsevich model Feynman rules and the operators D_k."""

from .errors import KModelError

__version__ = "0.1.0"
__all__ = ["KModelError", "__version__"]
