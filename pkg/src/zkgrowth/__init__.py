"""Numerical toolkit for the 2D Zakharov-Kuznetsov equation."""
from .errors import ZKError
from .grid import MultiIndex, Multiplier, RealField2D, SpectralGrid

__all__ = ["MultiIndex", "Multiplier", "RealField2D", "SpectralGrid", "ZKError"]
__version__ = "0.1.0"
