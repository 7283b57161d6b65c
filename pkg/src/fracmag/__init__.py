"""Numerical laboratory for the fractional magnetic p-Laplacian on truncated lattices."""

__version__ = "0.1.0"
