"""Numerical workbench for multilinear Fourier restriction estimates."""
__version__ = "0.1.0"
