"""Numerical checks of fluctuation symmetries for Gibbsian space-time measures."""

__version__ = "0.1.0"
